"""Command-line entry point: ``scenetext {synthgen,train,eval,predict,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 partial evaluation, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _assign(config: dict, key: str, value) -> None:
    # dotted keys address nested mappings, e.g. mix.synth=0.5
    *parents, leaf = key.split(".")
    node = config
    for p in parents:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot set {key!r}: {p!r} is not a mapping")
    node[leaf] = value


def parse_config_text(text: str, source: str) -> dict:
    """JSON object, or flat ``key = value`` lines (``#`` comments, dotted keys)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{source}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"{source}: top level must be an object")
        return data
    config: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _assign(config, key, _parse_value(value))
    return config


def load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    return parse_config_text(p.read_text(encoding="utf-8"), path)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scenetext", description="Scene-text recognizer toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synthgen", help="render a synthetic word corpus")
    p.add_argument("--n", type=int, required=True, help="number of word images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory (images/ + annotations.jsonl)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="key=value or JSON config file")
    p.add_argument("--override", nargs="*", default=[], metavar="KEY=VALUE", help="config overrides")
    p.add_argument("--seed", type=int, help="shorthand for --override seed=N")
    p.add_argument("--resume", help="continue from this checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint on benchmark datasets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--datasets", required=True, help="comma-separated name=annotations.jsonl")
    p.add_argument("--preset", help="benchmark protocol applied to every dataset (ic03, ic13, ic15, svt, svtp, iiit5k)")
    p.add_argument("--csv", help="also write the report as CSV")
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("predict", help="recognize the text of one word crop")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PGM/PPM word crop")
    p.add_argument("--dump-attention", metavar="CSV", help="write per-step attention maps")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--ops", default="all", help="'all' or comma-separated op names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=20, help="random configurations per op")
    return parser


def _cmd_synthgen(args) -> int:
    from .data.samples import save_corpus
    from .data.synth import synth_corpus

    if args.n < 1:
        raise UsageError("--n must be >= 1")
    path = save_corpus(synth_corpus(args.n, seed=args.seed), args.out)
    print(f"wrote {args.n} samples to {path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .trainer import NonFiniteLoss, TrainConfig, Trainer

    raw = load_config_file(args.config) if args.config else {}
    for item in args.override:
        if "=" not in item:
            raise UsageError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        _assign(raw, key.strip(), _parse_value(value.strip()))
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    try:
        trainer = Trainer.resume(args.resume, config) if args.resume else Trainer(config)
        result = trainer.train()
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    acc = "n/a" if result.train_acc is None else f"{result.train_acc:.4f}"
    print(f"steps={result.steps} loss={result.final_loss:.4f} train_acc={acc}")
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics}")
    return EXIT_OK


def _parse_datasets(spec: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        if "=" not in item:
            raise UsageError(f"--datasets entries must be name=path, got {item!r}")
        name, path = item.split("=", 1)
        out[name.strip()] = path.strip()
    if not out:
        raise UsageError("--datasets is empty")
    return out


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluate import BENCHMARKS, checkpoint_id, evaluate

    datasets = _parse_datasets(args.datasets)
    if args.preset is not None and args.preset.lower().replace("-", "") not in BENCHMARKS:
        raise UsageError(f"unknown --preset {args.preset!r}; choose from {sorted(BENCHMARKS)}")
    model, _, _ = load_checkpoint(args.checkpoint)
    report = evaluate(model, datasets, args.preset, checkpoint_id(args.checkpoint), args.batch_size)
    print(report.render())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return report.exit_code


def _cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .data.preprocess import preprocess
    from .data.samples import WordSample, read_image

    model, _, _ = load_checkpoint(args.checkpoint)
    pixels = read_image(args.image, allow_png=True)
    image = preprocess(WordSample(pixels, text="?"))
    result = model.decode(image[None])
    print(result.texts[0])
    if args.dump_attention:
        fh_h, fh_w = model.config.head.feature_hw
        # emitted symbols, then the step that produced the end token (absent if max_len was hit)
        tokens = result.tokens[0] + [model.vocab.end]
        maps = result.attention[0]
        with open(args.dump_attention, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "symbol", "row"] + [f"c{j}" for j in range(fh_w)])
            for step, weights in enumerate(maps[: len(tokens)]):
                symbol = model.vocab.symbols[tokens[step]]
                for r, line in enumerate(np.asarray(weights).reshape(fh_h, fh_w)):
                    writer.writerow([step, symbol, r] + [f"{w:.6g}" for w in line])
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import CHECKS, TOLERANCE, run_suite

    ops = None if args.ops == "all" else [o.strip() for o in args.ops.split(",") if o.strip()]
    if ops is not None:
        unknown = [o for o in ops if o not in CHECKS]
        if unknown:
            raise UsageError(f"unknown ops {unknown}; choose from {sorted(CHECKS)}")
    if args.configs < 1:
        raise UsageError("--configs must be >= 1")
    results = run_suite(ops, args.configs, args.seed)
    width = max(len(n) for n in results)
    for name, r in results.items():
        verdict = "ok" if r["passed"] else "FAIL"
        print(f"{name.ljust(width)}  max_rel_error={r['max_rel_error']:.3e}  {verdict}  ({r['seconds']:.1f}s)")
    failed = [n for n, r in results.items() if not r["passed"]]
    if failed:
        print(f"{len(failed)} op(s) exceed tolerance {TOLERANCE:g}: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


_COMMANDS = {
    "synthgen": _cmd_synthgen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcheck": _cmd_gradcheck,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
