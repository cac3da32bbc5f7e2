"""Command-line entry point.

Subcommands: analyze, filter, train, eval, curves. Machine-readable JSON goes
to stdout, logs to stderr. Exit codes: 0 success, 2 usage/config error,
3 backend/runtime error; `analyze` additionally exits 1 when the file fails
the syntax check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import List, Optional

from .backends import BackendError, HttpBackend, HttpBackendConfig, ToyBackend
from .config import ConfigError, RunConfig, load_config_file
from .judges import BuiltinJudge, CommandJudge
from .model import ToyModel, load_checkpoint
from .pipeline import evaluate, export_curves, run_loop
from .records import CorpusFormatError, read_corpus, write_corpus
from .scoring import filter_corpus
from .synthetic import corpus_vocab
from .verilog.analyzer import analyze_structure

log = logging.getLogger("itertl")

EXIT_OK = 0
EXIT_SYNTAX = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _add_common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run config file (fallback: $ITERTL_CONFIG)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="sampling worker count")
    p.add_argument("--backend-url", help="remote generation service base URL")
    p.add_argument("--judge-cmd", help="external judge command")
    p.add_argument("--lambda", dest="lam", type=float, help="ranking loss weight")
    p.add_argument("--alpha", type=float, help="ranking hinge margin")
    p.add_argument("--beta", type=float, help="minimum score gap for ranked pairs")
    p.add_argument("--k", type=int, help="responses per group incl. reference")
    p.add_argument("--iterations", type=int, help="number of loop iterations")
    p.add_argument("--strict-self-contained", action="store_true", default=None,
                   help="also penalize responses instantiating undefined submodules")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itertl",
        description="Iterative sample-score-train pipeline for Verilog generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="print the structure report of a Verilog file")
    p.add_argument("path")
    _add_common_flags(p)

    p = sub.add_parser("filter", help="drop unusable references from a corpus")
    p.add_argument("corpus_in")
    p.add_argument("corpus_out")
    _add_common_flags(p)

    p = sub.add_parser("train", help="run the iterative training loop")
    _add_common_flags(p)

    p = sub.add_parser("eval", help="pass@k evaluation")
    _add_common_flags(p)

    p = sub.add_parser("curves", help="export merged loss curves from a run manifest")
    p.add_argument("manifest")
    _add_common_flags(p)

    return parser


def _load_run_config(args: argparse.Namespace, require_file: bool) -> RunConfig:
    config_path = getattr(args, "config", None) or os.environ.get("ITERTL_CONFIG")
    if config_path:
        cfg = load_config_file(config_path)
    elif require_file:
        raise ConfigError("no config file: pass --config or set ITERTL_CONFIG")
    else:
        cfg = RunConfig()
    for attr in ("seed", "workers", "lam", "alpha", "beta", "k", "iterations"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "backend_url", None):
        cfg.backend_url = args.backend_url
        cfg.mode = "remote"
    if getattr(args, "judge_cmd", None):
        cfg.judge_cmd = args.judge_cmd
    if getattr(args, "strict_self_contained", None):
        cfg.strict_self_contained = True
    return cfg


def _make_backend(cfg: RunConfig, corpus_records) -> object:
    if cfg.mode == "remote":
        if not cfg.backend_url:
            raise ConfigError("remote mode requires backend_url")
        return HttpBackend(HttpBackendConfig(
            base_url=cfg.backend_url,
            timeout=cfg.backend_timeout,
            retries=cfg.backend_retries,
            backoff_base=cfg.backend_backoff,
            checkpoint_poll_interval=cfg.checkpoint_poll_interval,
            checkpoint_wait_timeout=cfg.checkpoint_wait_timeout,
        ))
    if cfg.checkpoint:
        return ToyBackend(load_checkpoint(cfg.checkpoint))
    # Vocab is built from the unfiltered corpus so filtered and unfiltered
    # runs share one token inventory and stay comparable.
    vocab = corpus_vocab(corpus_records)
    return ToyBackend(ToyModel(vocab, order=cfg.order, seed=cfg.seed))


def _make_judge(cfg: RunConfig):
    if cfg.judge_cmd:
        argv0 = CommandJudge(cfg.judge_cmd).argv[0]
        if shutil.which(argv0) is None and not Path(argv0).exists():
            raise ConfigError(f"judge command not found: {argv0}")
        return CommandJudge(cfg.judge_cmd)
    return BuiltinJudge()


def cmd_analyze(args) -> int:
    try:
        source = Path(args.path).read_text(encoding="utf-8")
    except OSError as exc:
        log.error("cannot read %s: %s", args.path, exc)
        return EXIT_USAGE
    report = analyze_structure(source)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.syntax_ok else EXIT_SYNTAX


def cmd_filter(args) -> int:
    records = read_corpus(args.corpus_in)
    kept, report = filter_corpus(records)
    write_corpus(args.corpus_out, kept)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args, require_file=True)
    if not cfg.corpus:
        raise ConfigError("train: config must set 'corpus'")
    if not cfg.output_dir:
        raise ConfigError("train: config must set 'output_dir'")
    records = read_corpus(cfg.corpus)
    iteration_cfg = cfg.iteration_config()  # validate before side effects
    backend = _make_backend(cfg, records)
    result = run_loop(records, iteration_cfg, backend, cfg.output_dir)
    log.info("completed %d iteration(s)%s", result.states[-1].t,
             " (early stop)" if result.stopped_early else "")
    print(result.manifest_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args, require_file=True)
    if not cfg.eval_corpus:
        raise ConfigError("eval: config must set 'eval_corpus'")
    if cfg.mode == "toy" and not cfg.checkpoint:
        raise ConfigError("eval: toy mode needs 'checkpoint' (or use a backend_url)")
    records = read_corpus(cfg.eval_corpus)
    if not records:
        raise ConfigError(f"eval: empty evaluation corpus {cfg.eval_corpus}")
    iteration_cfg = cfg.iteration_config()
    judge = _make_judge(cfg)
    backend = _make_backend(cfg, records)
    report = evaluate(backend, records, judge, iteration_cfg, out_dir=cfg.output_dir)
    payload = report.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    table = [f"{'metric':<10} {'value':>10}", f"{'pass@1':<10} {payload['pass@1']:>10.4f}"]
    for k in sorted(report.by_k):
        table.append(f"{f'pass@{k}':<10} {report.by_k[k].best:>10.4f}")
    print("\n".join(table), file=sys.stderr)
    return EXIT_OK


def cmd_curves(args) -> int:
    try:
        paths = export_curves(args.manifest)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    for p in paths:
        print(p)
    return EXIT_OK


_DISPATCH = {
    "analyze": cmd_analyze,
    "filter": cmd_filter,
    "train": cmd_train,
    "eval": cmd_eval,
    "curves": cmd_curves,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (ConfigError, CorpusFormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except BackendError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
