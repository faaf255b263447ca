"""Command line entry point.

    tgprompt stats   DATASET
    tgprompt eval    DATASET --mock recency --out runs/a
    tgprompt ablate  DATASET --mock recency --sweep-neighbors 0,1,2,5,10 --out runs/abl
    tgprompt explain --run runs/a --first-n 5000

Run options come from an optional ``--config`` file (JSON or ``key=value``
lines); flags given on the command line override it.  Exit codes: 0 ok,
1 bad configuration, 2 I/O or dataset error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .client import (
    AuthenticationError,
    BaseClient,
    ChatClient,
    ClientError,
    EndpointConfig,
    FrequencyMock,
    PerfectMock,
    RecencyMock,
    ScriptedMock,
    WrongMock,
)
from .evaluate import (
    EvalConfig,
    EvalResult,
    default_window,
    read_records,
    run_edgebank,
    run_eval,
    write_records,
)
from .explain import HeuristicExplainer, KeywordClassifier, aggregate_report, explain_run
from .graph import (
    EdgeStream,
    StreamError,
    chronological_split,
    compute_stats,
    ingest_csv,
    stream_manifest,
)
from .negatives import NegativeSampler, NegativeSetError, load_fixed_negatives, save_negatives
from .prompts import PromptConfig

log = logging.getLogger("tgprompt")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ENDPOINT = 0, 1, 2, 3

ABLATION_FLAGS = {
    "full": {},
    "no-icl": {"include_examples": False},
    "no-neighbors": {"include_neighbors": False},
    "no-background": {"include_background": False},
    "none": {"include_examples": False, "include_neighbors": False, "include_background": False},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    bipartite: bool = False
    delimiter: str = ","
    has_header: bool | None = None
    sort: bool = False
    train_frac: float = 0.70
    val_frac: float = 0.15
    background_size: int = 300
    shots: int = 5
    neighbors: int = 2
    batch_size: int = 200
    max_prompt_chars: int = 48000
    include_background: bool = True
    include_examples: bool = True
    include_neighbors: bool = True
    num_negatives: int = 20
    negative_pool: str = "source"
    fixed_negatives: str | None = None
    seed: int = 0
    window: float | None = None
    directed: bool = False
    strict: bool = False
    max_queries: int | None = None
    mock: str | None = None
    script: str | None = None
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = "TGT_API_KEY"
    max_parallel: int = 8
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 256
    baseline: str | None = None
    with_baselines: bool = False
    transcript: str | None = None
    out: str = "run"

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(
            background_size=self.background_size,
            neighbors=self.neighbors,
            shots=self.shots,
            batch_size=self.batch_size,
            max_prompt_chars=self.max_prompt_chars,
            include_background=self.include_background,
            include_examples=self.include_examples,
            include_neighbors=self.include_neighbors,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            prompt=self.prompt_config(),
            num_negatives=self.num_negatives,
            seed=derive_seed(self.seed, "negatives"),
            negative_pool=self.negative_pool,
            directed=self.directed,
            strict=self.strict,
            max_queries=self.max_queries,
        )

    def endpoint_config(self) -> EndpointConfig:
        if not self.base_url or not self.model:
            raise ConfigError("a live run needs --base-url and --model (or pick a --mock)")
        return EndpointConfig(
            base_url=self.base_url,
            model=self.model,
            api_key_env=self.api_key_env,
            max_parallel=self.max_parallel,
            timeout=self.timeout,
            max_retries=self.max_retries,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, value):
    default = {f.name: f for f in fields(RunConfig)}[name]
    kind = default.type
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
        if "None" in kind:
            return None
        raise ConfigError(f"{name} cannot be empty")
    if not isinstance(value, str):
        return value
    try:
        if kind.startswith("bool"):
            return _BOOL[value.lower()]
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


def load_config_file(path: str | Path) -> dict:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            raw[key.strip().replace("-", "_")] = value.strip()
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def derive_seed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def revision() -> str:
    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_stream(cfg: RunConfig) -> EdgeStream:
    if not cfg.dataset:
        raise ConfigError("no dataset given")
    stream = ingest_csv(
        cfg.dataset,
        bipartite=cfg.bipartite,
        delimiter=cfg.delimiter,
        has_header=cfg.has_header,
        sort=cfg.sort,
    )
    try:
        return chronological_split(stream, cfg.train_frac, cfg.val_frac)
    except StreamError as exc:
        raise ConfigError(str(exc)) from None


def make_client(cfg: RunConfig, stream: EdgeStream) -> BaseClient:
    truth = {i: e.dst for i, e in enumerate(stream.test)}
    if cfg.mock is None:
        return ChatClient(cfg.endpoint_config(), transcript=cfg.transcript)
    if cfg.mock == "perfect":
        return PerfectMock(truth)
    if cfg.mock == "wrong":
        return WrongMock(truth, stream.destination_range())
    if cfg.mock == "recency":
        return RecencyMock()
    if cfg.mock == "frequency":
        return FrequencyMock()
    if cfg.mock == "scripted":
        if not cfg.script:
            raise ConfigError("--mock scripted needs --script FILE")
        return ScriptedMock.from_file(cfg.script)
    raise ConfigError(f"unknown mock {cfg.mock!r}")


def _dataset_manifest(cfg: RunConfig, stream: EdgeStream) -> dict:
    side = stream_manifest(stream)
    side.pop("labels")
    return {"path": str(cfg.dataset), "sha256": file_sha256(cfg.dataset), **side}


def write_manifest(out: Path, command: str, cfg: RunConfig, stream: EdgeStream, client: BaseClient | None) -> None:
    manifest = {
        "command": command,
        "config": asdict(cfg),
        "config_hash": cfg.hash(),
        "seeds": {"global": cfg.seed, "negatives": derive_seed(cfg.seed, "negatives")},
        "dataset": _dataset_manifest(cfg, stream),
        "endpoint": client.identity() if client is not None else {"kind": "baseline", "name": cfg.baseline},
        "revision": revision(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    (out / "stream_manifest.json").write_text(json.dumps(stream_manifest(stream)) + "\n")


def evaluate(cfg: RunConfig, stream: EdgeStream, out: Path, command: str = "eval") -> dict:
    """Run one configuration and write its output directory; returns the summary."""
    out.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.eval_config()
    sampler = NegativeSampler(stream, ecfg.num_negatives, ecfg.seed, ecfg.negative_pool)
    fixed = load_fixed_negatives(cfg.fixed_negatives, stream) if cfg.fixed_negatives else None
    window = cfg.window if cfg.window is not None else default_window(stream)

    results: list[EvalResult] = []
    client = None
    if cfg.baseline in (None, ""):
        client = make_client(cfg, stream)
        try:
            results.append(run_eval(stream, ecfg, client, sampler, fixed_negatives=fixed))
        finally:
            client.close()
    elif cfg.baseline == "edgebank-inf":
        results.append(run_edgebank(stream, ecfg, None, sampler, fixed))
    elif cfg.baseline == "edgebank-tw":
        results.append(run_edgebank(stream, ecfg, window, sampler, fixed))
    else:
        raise ConfigError(f"unknown baseline {cfg.baseline!r}")
    if cfg.with_baselines and cfg.baseline in (None, ""):
        results.append(run_edgebank(stream, ecfg, None, sampler, fixed))
        results.append(run_edgebank(stream, ecfg, window, sampler, fixed))

    primary = results[0]
    write_records(primary.records, out / "records.jsonl")
    save_negatives(primary.negatives, out / "negatives.jsonl")
    for extra in results[1:]:
        write_records(extra.records, out / f"records_{extra.method}.jsonl")
    summary = {
        "mrr": primary.mrr,
        "method": primary.method,
        "num_queries": len(primary.records),
        "num_errors": sum(r.error is not None for r in primary.records),
        "edgebank_window": window,
        "methods": {r.method: r.summary() for r in results},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    write_manifest(out, command, cfg, stream, client)
    if client is not None and cfg.mock is None and summary["num_errors"] == summary["num_queries"]:
        # outputs are kept, but a run with no successful call is an endpoint failure
        first = primary.records[0].error
        raise ClientError(f"every query failed; first error: {first}")
    return summary


def cmd_stats(cfg: RunConfig, as_json: bool = False) -> int:
    stream = load_stream(cfg)
    stats = compute_stats(stream)
    row = stats.as_row(Path(cfg.dataset).stem)
    if as_json:
        print(json.dumps(row))
        return EXIT_OK
    header = ["Dataset", "# Nodes", "# Edges", "# Unique Edges", "# Unique Steps", "Surprise", "Duration"]
    surprise = "n/a" if stats.surprise is None else f"{stats.surprise:.3f}"
    values = [
        row["dataset"],
        f"{stats.num_nodes:,}",
        f"{stats.num_edges:,}",
        f"{stats.num_unique_edges:,}",
        f"{stats.num_unique_steps:,}",
        surprise,
        f"{stats.duration[0]}..{stats.duration[1]}",
    ]
    print(" | ".join(header))
    print(" | ".join(values))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    stream = load_stream(cfg)
    summary = evaluate(cfg, stream, Path(cfg.out))
    for name, s in summary["methods"].items():
        print(f"{name}\tMRR={s['mrr']:.4f}\tqueries={s['num_queries']}\terrors={s['num_errors']}")
    return EXIT_OK


def parse_sweep(neighbors: str | None, flags: str | None) -> list[tuple[str, dict]]:
    sweep: list[tuple[str, dict]] = []
    if neighbors:
        for tok in neighbors.split(","):
            try:
                m = int(tok)
            except ValueError:
                raise ConfigError(f"bad neighbor count {tok!r}") from None
            if m < 0:
                raise ConfigError("neighbor counts must be >= 0")
            sweep.append((f"neighbors={m}", {"neighbors": m}))
    if flags:
        for tok in flags.split(","):
            tok = tok.strip()
            if tok not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation {tok!r}; choose from {sorted(ABLATION_FLAGS)}")
            sweep.append((tok, ABLATION_FLAGS[tok]))
    if not sweep:
        raise ConfigError("empty sweep; pass --sweep-neighbors and/or --sweep-flags")
    return sweep


def cmd_ablate(cfg: RunConfig, neighbors: str | None, flags: str | None) -> int:
    sweep = parse_sweep(neighbors, flags)
    stream = load_stream(cfg)
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, overrides in sweep:
        sub = replace(cfg, **overrides, out=str(root / name.replace("=", "_")))
        summary = evaluate(sub, stream, Path(sub.out), command="ablate")
        rows.append({"configuration": name, "mrr": summary["mrr"], "num_queries": summary["num_queries"]})
    with (root / "ablation.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["configuration", "mrr", "num_queries"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    width = max(len(r["configuration"]) for r in rows)
    print(f"{'configuration':<{width}}  MRR")
    for r in rows:
        print(f"{r['configuration']:<{width}}  {r['mrr']:.4f}")
    return EXIT_OK


def cmd_explain(
    run_dir: str,
    first_n: int = 5000,
    out: str | None = None,
    explain_script: str | None = None,
    classify_script: str | None = None,
) -> int:
    run = Path(run_dir)
    manifest_path = run / "manifest.json"
    records_path = run / "records.jsonl"
    if not manifest_path.exists() or not records_path.exists():
        raise FileNotFoundError(f"{run} is not a completed eval run (manifest.json/records.jsonl missing)")
    manifest = json.loads(manifest_path.read_text())
    cfg = RunConfig(**manifest["config"])
    if cfg.baseline:
        raise ConfigError("explanations need an LLM run, not a baseline run")
    stream = load_stream(cfg)
    records = read_records(records_path)
    if first_n < 0:
        raise ConfigError("--first-n must be >= 0")

    if explain_script:
        explainer: BaseClient = ScriptedMock.from_file(explain_script)
    elif cfg.mock is not None:
        explainer = HeuristicExplainer()
    else:
        explainer = ChatClient(cfg.endpoint_config(), transcript=cfg.transcript)
    if classify_script:
        classifier: BaseClient = ScriptedMock.from_file(classify_script)
    elif cfg.mock is not None:
        classifier = KeywordClassifier()
    else:
        classifier = explainer

    try:
        expl = explain_run(stream, cfg.eval_config(), records, explainer, classifier, first_n=first_n)
    finally:
        explainer.close()
        classifier.close()
    report = aggregate_report(records, expl)

    dest = Path(out) if out else run
    dest.mkdir(parents=True, exist_ok=True)
    with (dest / "explanations.jsonl").open("w") as fh:
        for e in expl:
            fh.write(e.to_json() + "\n")
    (dest / "category_report.json").write_text(report.to_json() + "\n")
    (dest / "category_report.csv").write_text(report.to_csv())
    print(report.to_csv(), end="")
    print(f"explained={len(expl)} classified={report.num_classified} overall_mrr={report.overall_mrr:.4f}")
    return EXIT_OK


def _add_run_options(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("dataset", nargs="?", default=S, help="edge list CSV: src,dst,ts[,extra...]")
    p.add_argument("--config", default=None, help="JSON or key=value file; flags override it")
    g = p.add_argument_group("dataset")
    g.add_argument("--bipartite", action="store_true", default=S)
    g.add_argument("--delimiter", default=S)
    g.add_argument("--header", dest="has_header", action="store_true", default=S)
    g.add_argument("--no-header", dest="has_header", action="store_false", default=S)
    g.add_argument("--sort", action="store_true", default=S, help="stable-sort rows by timestamp")
    g.add_argument("--train-frac", type=float, default=S)
    g.add_argument("--val-frac", type=float, default=S)

    g = p.add_argument_group("prompt")
    g.add_argument("--background-size", type=int, default=S, help="edges in the background block (300)")
    g.add_argument("--shots", type=int, default=S, help="in-context examples (5)")
    g.add_argument("--neighbors", type=int, default=S, help="recent neighbors per source (2)")
    g.add_argument("--batch-size", type=int, default=S, help="queries per batch (200)")
    g.add_argument("--max-prompt-chars", type=int, default=S)
    g.add_argument("--no-background", dest="include_background", action="store_false", default=S)
    g.add_argument("--no-icl", dest="include_examples", action="store_false", default=S)
    g.add_argument("--no-neighbors", dest="include_neighbors", action="store_false", default=S)

    g = p.add_argument_group("evaluation")
    g.add_argument("--negatives", dest="num_negatives", type=int, default=S, help="negatives per query (20)")
    g.add_argument("--negative-pool", choices=["source", "global"], default=S)
    g.add_argument("--fixed-negatives", default=S, help="negative-set JSONL overriding generation")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--window", type=float, default=S, help="EdgeBank-tw window (default: train duration)")
    g.add_argument("--directed", action="store_true", default=S)
    g.add_argument("--strict", action="store_true", default=S, help="score hits@1 instead of ranked lists")
    g.add_argument("--max-queries", type=int, default=S)
    g.add_argument("--baseline", choices=["edgebank-inf", "edgebank-tw"], default=S)
    g.add_argument("--with-baselines", action="store_true", default=S)
    g.add_argument("--out", default=S)

    g = p.add_argument_group("model")
    g.add_argument("--mock", choices=["perfect", "wrong", "recency", "frequency", "scripted"], default=S)
    g.add_argument("--script", default=S, help="JSONL of {query_id, text} for --mock scripted")
    g.add_argument("--base-url", default=S)
    g.add_argument("--model", default=S)
    g.add_argument("--api-key-env", default=S)
    g.add_argument("--max-parallel", type=int, default=S)
    g.add_argument("--timeout", type=float, default=S)
    g.add_argument("--max-retries", type=int, default=S)
    g.add_argument("--temperature", type=float, default=S)
    g.add_argument("--max-tokens", type=int, default=S)
    g.add_argument("--transcript", default=S, help="append request/response pairs to this JSONL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgprompt", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics")
    _add_run_options(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="evaluate a model or baseline on the test split")
    _add_run_options(p)

    p = sub.add_parser("ablate", help="evaluate a sweep of prompt configurations")
    _add_run_options(p)
    p.add_argument("--sweep-neighbors", default=None, help="comma list, e.g. 0,1,2,5,10")
    p.add_argument("--sweep-flags", default=None, help=f"comma list from {','.join(ABLATION_FLAGS)}")

    p = sub.add_parser("explain", help="explain and classify predictions of an eval run")
    p.add_argument("--run", required=True, help="output directory of an eval run")
    p.add_argument("--first-n", type=int, default=5000)
    p.add_argument("--out", default=None, help="defaults to the run directory")
    p.add_argument("--explain-script", default=None, help="JSONL {query_id, text} of explanations")
    p.add_argument("--classify-script", default=None, help="JSONL {query_id, text} of labels")
    return parser


_NON_CONFIG = {"command", "config", "verbose", "json", "sweep_neighbors", "sweep_flags"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = load_config_file(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    values.update(flags)
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "explain":
            return cmd_explain(args.run, args.first_n, args.out, args.explain_script, args.classify_script)
        cfg = resolve_config(args)
        if args.command == "stats":
            return cmd_stats(cfg, args.json)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_ablate(cfg, args.sweep_neighbors, args.sweep_flags)
    except (ConfigError, NegativeSetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # PromptConfig / EndpointConfig validation
        if isinstance(exc, StreamError):
            print(f"dataset error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AuthenticationError, ClientError) as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
