from .clustering import (
    KNOWN_SUBTASK_COUNTS,
    SubtaskCluster,
    TaskClusterer,
    cluster_tasks,
    describe_prompt,
    describe_subtask,
)
from .corpus import TaskInstance, corpus_digest, load_corpus, split_corpus, write_corpus
from .embedding import HashingEmbedder, RemoteEmbedder, bucket, embed_texts
from .kmeans import LloydKMeans, kmeans_cluster, wcss

__all__ = [
    "HashingEmbedder", "KNOWN_SUBTASK_COUNTS", "LloydKMeans", "RemoteEmbedder", "SubtaskCluster",
    "TaskClusterer", "TaskInstance", "bucket", "cluster_tasks", "corpus_digest", "describe_prompt",
    "describe_subtask", "embed_texts", "kmeans_cluster", "load_corpus", "split_corpus", "wcss",
    "write_corpus",
]
