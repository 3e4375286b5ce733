"""Command-line driver.

    flowmeta cluster     --corpus tasks.jsonl [--clusters 4,4]
    flowmeta optimize    --corpus tasks.jsonl --backend scripted --scripted-rules rules.json
    flowmeta optimize    --resume RUN_ID
    flowmeta adapt-eval  RUN_ID [--no-adapt]
    flowmeta report      RUN_ID [--json]

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .errors import ConfigError, CorpusError, CorruptRun, FlowMetaError
from .llm.backends import API_KEY_ENV, RemoteBackend, ScriptedBackend
from .llm.cache import DiskCache
from .llm.gateway import Gateway
from .optim.config import OptimizerConfig
from .optim.engine import Counters, MetaOptimizer, run_test_phase
from .report import build_report, render_fitness_table, render_report, render_test_table
from .store import RunStore
from .tasks.clustering import cluster_tasks
from .tasks.corpus import corpus_digest, load_corpus, split_corpus
from .tasks.embedding import HashingEmbedder, RemoteEmbedder
from .validation import check_positive_int, check_split_ratio

log = logging.getLogger("flowmeta")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_CLUSTERS = 4


@dataclass
class CliConfig:
    """Merged settings: config file first, then command-line flags."""

    corpus: str | None = None
    run_dir: str = "runs"
    seed: int = 0
    split: tuple[int, int] = (1, 4)
    val_clusters: int = DEFAULT_CLUSTERS
    test_clusters: int = DEFAULT_CLUSTERS
    cluster_mode: str = "auto"
    backend: str = "remote"
    base_url: str | None = None
    scripted_rules: str | None = None
    embedder: str = "hashing"
    embed_url: str | None = None
    embed_model: str = "all-MiniLM-L6-v2"
    concurrency: int = 1
    optimizer: dict = field(default_factory=dict)

    def optimizer_config(self) -> OptimizerConfig:
        data = {**self.optimizer, "seed": self.seed, "concurrency": self.concurrency}
        return OptimizerConfig.from_json(data)

    def to_json(self) -> dict:
        data = asdict(self)
        data["split"] = list(self.split)
        data["optimizer"] = self.optimizer_config().to_json()
        return data

    @classmethod
    def from_json(cls, data: dict) -> "CliConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.split = check_split_ratio(cfg.split)
        cfg.val_clusters = check_positive_int(cfg.val_clusters, "validation clusters")
        cfg.test_clusters = check_positive_int(cfg.test_clusters, "test clusters")
        cfg.concurrency = check_positive_int(cfg.concurrency, "concurrency")
        if cfg.backend not in ("remote", "scripted"):
            raise ConfigError(f"backend must be 'remote' or 'scripted', got {cfg.backend!r}")
        if cfg.embedder not in ("hashing", "remote"):
            raise ConfigError(f"embedder must be 'hashing' or 'remote', got {cfg.embedder!r}")
        cfg.optimizer_config()
        return cfg


def _flatten_file(data: dict) -> dict:
    """Map the nested config-file layout onto :class:`CliConfig` fields."""
    out = dict(data)
    clusters = out.pop("clusters", None)
    if isinstance(clusters, dict):
        if "validation" in clusters:
            out["val_clusters"] = clusters["validation"]
        if "test" in clusters:
            out["test_clusters"] = clusters["test"]
        if "mode" in clusters:
            out["cluster_mode"] = clusters["mode"]
    elif clusters is not None:
        out["val_clusters"] = out["test_clusters"] = clusters
    backend = out.pop("backend", None)
    if isinstance(backend, dict):
        out["backend"] = backend.get("kind", "remote")
        for key in ("base_url", "scripted_rules"):
            if key in backend:
                out[key] = backend[key]
    elif backend is not None:
        out["backend"] = backend
    embedder = out.pop("embedder", None)
    if isinstance(embedder, dict):
        out["embedder"] = embedder.get("kind", "hashing")
        if "base_url" in embedder:
            out["embed_url"] = embedder["base_url"]
        if "model" in embedder:
            out["embed_model"] = embedder["model"]
    elif embedder is not None:
        out["embedder"] = embedder
    return out


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return _flatten_file(data)


def parse_clusters(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--clusters expects M or M,N, got {text!r}") from None
    if len(nums) == 1:
        return nums[0], nums[0]
    if len(nums) == 2:
        return nums[0], nums[1]
    raise ConfigError(f"--clusters expects M or M,N, got {text!r}")


def merge_config(args, base: dict | None = None) -> CliConfig:
    data = dict(base or {})
    if getattr(args, "config", None):
        data.update(load_config_file(args.config))
    flag_map = {"corpus": "corpus", "run_dir": "run_dir", "seed": "seed", "backend": "backend",
                "scripted_rules": "scripted_rules", "base_url": "base_url", "concurrency": "concurrency"}
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            data[key] = value
    if getattr(args, "clusters", None):
        data["val_clusters"], data["test_clusters"] = parse_clusters(args.clusters)
    opt = dict(data.get("optimizer") or {})
    for attr, key in (("n_outer", "n_outer"), ("n_inner", "n_inner"), ("epsilon", "epsilon")):
        value = getattr(args, attr, None)
        if value is not None:
            opt[key] = value
    if getattr(args, "no_reflection", False):
        opt["reflection"] = False
    if getattr(args, "no_adapt", False):
        opt["adapt"] = False
    data["optimizer"] = opt
    return CliConfig.from_json(data)


# -- plumbing -----------------------------------------------------------------


def make_backend(cfg: CliConfig):
    if cfg.backend == "scripted":
        if not cfg.scripted_rules:
            raise ConfigError("--backend scripted needs --scripted-rules (a JSON rule file)")
        path = Path(cfg.scripted_rules)
        if not path.is_file():
            raise ConfigError(f"scripted rule file {path} not found")
        try:
            return ScriptedBackend.from_file(path)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"scripted rule file {path} is invalid: {exc}") from None
    if not cfg.base_url:
        raise ConfigError("--backend remote needs a base URL (config backend.base_url or --base-url)")
    if not os.environ.get(API_KEY_ENV):
        log.warning("%s is not set; requests will be sent without credentials", API_KEY_ENV)
    return RemoteBackend(cfg.base_url)


def make_embedder(cfg: CliConfig):
    if cfg.embedder == "remote":
        if cfg.backend == "scripted":
            log.warning("scripted backend: using the local hashing embedder instead of the remote one")
            return HashingEmbedder()
        if not cfg.embed_url:
            raise ConfigError("remote embedder needs embedder.base_url")
        return RemoteEmbedder(base_url=cfg.embed_url, model=cfg.embed_model)
    return HashingEmbedder()


def load_tasks(cfg: CliConfig):
    if not cfg.corpus:
        raise ConfigError("no corpus given (--corpus or 'corpus' in the config file)")
    path = Path(cfg.corpus)
    if not path.is_file():
        raise ConfigError(f"corpus file {path} not found")
    return load_corpus(path)


def run_path(cfg: CliConfig, run_id: str) -> Path:
    return Path(cfg.run_dir) / run_id


def open_run(run_dir: str, run_id: str) -> RunStore:
    path = Path(run_dir) / run_id
    if not (path / "manifest.json").is_file():
        raise ConfigError(f"unknown run id {run_id!r} (no manifest under {path})")
    return RunStore.open(path)


def new_run_id(cfg: CliConfig, digest: str) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    salt = hashlib.sha256(f"{digest}:{cfg.seed}:{os.getpid()}:{stamp}".encode()).hexdigest()[:6]
    return f"{stamp}-{salt}"


def gateway_for(cfg: CliConfig, store: RunStore) -> Gateway:
    cache = DiskCache(store.root / "cache") if store.root is not None else None
    return Gateway(make_backend(cfg), cache=cache)


def stored_config(store: RunStore, args) -> CliConfig:
    """The run's snapshot, with only runtime flags (backend, rules, width) taken from the command line."""
    snap = store.config
    snap.pop("optimizer", None)
    base = {**snap, "optimizer": {k: v for k, v in store.config["optimizer"].items()
                                  if k not in ("seed", "concurrency")}}
    for attr in ("backend", "scripted_rules", "base_url", "concurrency"):
        value = getattr(args, attr, None)
        if value is not None:
            base[attr] = value
    if getattr(args, "no_adapt", False):
        base["optimizer"]["adapt"] = False
    return CliConfig.from_json(base)


def load_run_tasks(cfg: CliConfig, store: RunStore):
    tasks = load_tasks(cfg)
    expected = store.manifest.get("corpus", {}).get("digest")
    if expected and corpus_digest(tasks) != expected:
        raise ConfigError(f"corpus {cfg.corpus} changed since run {store.run_id} was created")
    return {t.id: t for t in tasks}


# -- commands -----------------------------------------------------------------


def cmd_cluster(cfg: CliConfig, run_id: str | None = None, out=None) -> RunStore:
    out = out or sys.stdout
    tasks = load_tasks(cfg)
    validation, test = split_corpus(tasks, cfg.split, seed=cfg.seed)
    embedder = make_embedder(cfg)
    val_clusters = cluster_tasks(validation, cfg.val_clusters, embedder=embedder, seed=cfg.seed, mode=cfg.cluster_mode)
    test_clusters = cluster_tasks(test, cfg.test_clusters, embedder=embedder, seed=cfg.seed, mode=cfg.cluster_mode)
    digest = corpus_digest(tasks)
    run_id = run_id or new_run_id(cfg, digest)
    corpus_info = {"path": str(Path(cfg.corpus).resolve()), "digest": digest, "size": len(tasks),
                   "validation": len(validation), "test": len(test)}
    store = RunStore.create(run_path(cfg, run_id), run_id, cfg.to_json(), corpus_info)
    store.write_clusters("validation", val_clusters)
    store.write_clusters("test", test_clusters)
    store.mark_phase("clustered")
    print(f"run {run_id}: {len(validation)} validation / {len(test)} test tasks", file=out)
    for name, clusters in (("validation", val_clusters), ("test", test_clusters)):
        sizes = ", ".join(f"{c.key}{'/' + c.label if c.label else ''}={len(c.members)}" for c in clusters)
        print(f"  {name} clusters ({len(clusters)}): {sizes}", file=out)
    return store


def cmd_optimize(cfg: CliConfig, store: RunStore, out=None) -> RunStore:
    out = out or sys.stdout
    by_id = load_run_tasks(cfg, store)
    clusters = store.read_clusters("validation")
    if clusters is None:
        raise CorruptRun(f"run {store.run_id} has no validation clusters")
    train = [by_id[tid] for c in clusters for tid in c.members]
    optimizer = MetaOptimizer(train, clusters, gateway_for(cfg, store), cfg.optimizer_config(), store)
    final = optimizer.run()
    if not store.finalized:
        store.finalize()
    report = build_report(store)
    print(render_fitness_table(report), file=out)
    print(f"final workflow {final.name} (entry {final.id}): mean fitness {final.mean_fitness(optimizer.keys):.4f}",
          file=out)
    print(f"run id: {store.run_id}", file=out)
    return store


def cmd_adapt_eval(cfg: CliConfig, store: RunStore, out=None) -> dict:
    out = out or sys.stdout
    optimized = [p for p in store.phases if p["name"] == "optimized"]
    if not optimized:
        raise ConfigError(f"run {store.run_id} has not finished optimizing; run 'optimize --resume' first")
    state = optimized[0]["state"]
    final = store.get(state["global_id"])
    by_id = load_run_tasks(cfg, store)
    clusters = store.read_clusters("test")
    tasks = [by_id[tid] for c in clusters for tid in c.members]
    opt = cfg.optimizer_config()
    counters = Counters()
    gateway = gateway_for(cfg, store)
    report = run_test_phase(final, tasks, opt, gateway, clusters=clusters, adapt=opt.adapt, counters=counters)
    bound = opt.budget_bound(len(store.read_clusters("validation")), len(clusters))
    report["budget"] = {"optimizer_calls": state["counters"]["optimizer"] + counters.optimizer, "bound": bound}
    name = "test-adapt" if opt.adapt else "test-no-adapt"
    store.write_report(name, report)
    text = render_test_table(report)
    store.write_text_report(name, text + "\n")
    for marker in (["adapted"] if opt.adapt else []) + ["evaluated"]:
        if not store.has_phase(marker):
            store.mark_phase(marker, {"report": f"reports/{name}.json"})
    print(text, file=out)
    print(f"report: {store.root / 'reports' / (name + '.json')}", file=out)
    return report


def cmd_report(store: RunStore, as_json: bool = False, out=None) -> dict:
    out = out or sys.stdout
    report = build_report(store)
    store.write_report("summary", report)
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False), file=out)
    else:
        print(render_report(report), end="", file=out)
    return report


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file; flags override its values")
    common.add_argument("--run-dir", help="directory holding run directories (default: runs)")
    common.add_argument("--backend", choices=("remote", "scripted"))
    common.add_argument("--scripted-rules", help="JSON rule file for --backend scripted")
    common.add_argument("--base-url", help="chat-completions endpoint for --backend remote")
    common.add_argument("--concurrency", type=int, help="parallel task evaluations")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    setup = argparse.ArgumentParser(add_help=False)
    setup.add_argument("--corpus", help="JSON-lines task file")
    setup.add_argument("--seed", type=int)
    setup.add_argument("--clusters", help="subtask counts: M (both splits) or M,N (validation,test)")
    setup.add_argument("--run-id", help="name for a new run (default: timestamp-based)")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--n-outer", type=int)
    search.add_argument("--n-inner", type=int)
    search.add_argument("--epsilon", type=float)
    search.add_argument("--no-reflection", action="store_true", help="skip the reflection pass")

    parser = argparse.ArgumentParser(prog="flowmeta", description="Bi-level search over agentic workflows.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("cluster", parents=[common, setup], help="split and cluster a corpus into a new run")
    p = sub.add_parser("optimize", parents=[common, setup, search], help="run (or resume) the workflow search")
    p.add_argument("--resume", metavar="RUN_ID", help="continue an existing run from its last phase marker")
    p = sub.add_parser("adapt-eval", parents=[common], help="adapt the final workflow per test cluster and evaluate")
    p.add_argument("run_id")
    p.add_argument("--no-adapt", action="store_true", help="evaluate the final workflow without adaptation")
    p = sub.add_parser("report", parents=[common], help="summarise a run")
    p.add_argument("run_id")
    p.add_argument("--json", action="store_true", help="print the JSON report instead of tables")
    return parser


def _run_dir(args) -> str:
    if args.run_dir:
        return args.run_dir
    if args.config:
        return load_config_file(args.config).get("run_dir", "runs")
    return "runs"


def dispatch(args) -> int:
    if args.command == "cluster":
        cmd_cluster(merge_config(args), args.run_id)
    elif args.command == "optimize":
        if args.resume:
            store = open_run(_run_dir(args), args.resume)
            cfg = stored_config(store, args)
        else:
            cfg = merge_config(args)
            make_backend(cfg)  # validate backend settings before any work
            store = cmd_cluster(cfg, args.run_id)
        cmd_optimize(cfg, store)
    elif args.command == "adapt-eval":
        store = open_run(_run_dir(args), args.run_id)
        cmd_adapt_eval(stored_config(store, args), store)
    else:
        cmd_report(open_run(_run_dir(args), args.run_id), args.json)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, CorpusError) as exc:
        print(f"flowmeta: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("flowmeta: interrupted; continue with 'optimize --resume RUN_ID'", file=sys.stderr)
        return EXIT_RUNTIME
    except FlowMetaError as exc:
        print(f"flowmeta: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
