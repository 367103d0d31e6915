"""Command line: ``guidecap {train,caption,evaluate,gradcheck,ablate}``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.

Caption files hold one ``image_id<TAB>caption`` line per image.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

from .config import RunConfig, dump_config, load_config
from .corpus import DatasetSplit, preprocess_caption, read_dataset, synth_generate, write_dataset
from .exceptions import ConfigError, DataError, GuidecapError
from .metrics import evaluate
from .pipeline import CaptionModel
from .trainer import ablate, ablation_table, grad_check, train

log = logging.getLogger("guidecap")

CHECKPOINT = "checkpoint.txt"
REPORT = "report.tsv"
PREDICTOR = "predictor.txt"
ABLATION = "ablation.tsv"


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def load_dataset(cfg: RunConfig) -> DatasetSplit:
    if cfg.synth is not None:
        return synth_generate(cfg.synth, cfg.synth_seed)
    if cfg.train_path is None:
        raise ConfigError("no dataset: set [data] train = <file> or add a [synth] section")
    split = [read_dataset(cfg.path(p)) if p else [] for p in (cfg.train_path, cfg.val_path, cfg.test_path)]
    return DatasetSplit(*split)


def _out_dir(cfg: RunConfig) -> str:
    out = cfg.path(cfg.out_dir)
    os.makedirs(out, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = load_dataset(cfg)
    out = _out_dir(cfg)
    if cfg.synth is not None:
        for name, records in (("train", data.train), ("val", data.val), ("test", data.test)):
            write_dataset(os.path.join(out, f"{name}.tsv"), records)
    model, report = train(data, cfg.train_config())
    model.save(os.path.join(out, CHECKPOINT))
    _write(os.path.join(out, REPORT), report.to_text())
    if model.predictor is not None:
        _write(os.path.join(out, PREDICTOR), model.predictor.params_.to_text())
    _write(os.path.join(out, "config.ini"), dump_config(cfg))
    print(f"best epoch {report.best_epoch} ({report.stop_reason}); wrote {out}")
    return 0


def cmd_caption(args) -> int:
    model = CaptionModel.load(args.checkpoint)
    others = [CaptionModel.load(p) for p in (args.ensemble or [])]
    records = read_dataset(args.data)
    lines = []
    for r in records:
        ids = model.caption_ids(r, beam=args.beam, max_len=args.max_len, greedy=args.greedy,
                                others=others if args.ensemble is not None else None)
        lines.append(f"{r.image_id}\t{' '.join(model.vocab.decode(ids))}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def read_captions(path) -> List[Tuple[str, str]]:
    try:
        with open(path) as fh:
            lines = [l.rstrip("\n") for l in fh if l.strip()]
    except OSError as exc:
        raise DataError(f"cannot read captions {path}: {exc.strerror}") from None
    if not lines:
        raise DataError(f"caption file {path} is empty")
    out, seen = [], set()
    for i, line in enumerate(lines, 1):
        image_id, _, caption = line.partition("\t")
        if image_id in seen:
            raise DataError(f"{path}:{i}: duplicate image id {image_id}")
        seen.add(image_id)
        out.append((image_id, caption))
    return out


def cmd_evaluate(args) -> int:
    caps = read_captions(args.captions)
    refs = {r.image_id: r for r in read_dataset(args.references)}
    missing = [i for i, _ in caps if i not in refs]
    if missing:
        raise DataError(f"{len(missing)} caption id(s) not in references: {', '.join(missing)}")
    cands = [preprocess_caption(c) for _, c in caps]
    report = evaluate(cands, [refs[i].tokenized() for i, _ in caps])
    if args.output:
        _write(args.output + ".txt", report.to_text())
        _write(args.output + ".kv", report.to_kv())
    sys.stdout.write(report.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    gc = cfg.gradcheck
    tol = gc.tolerance if args.tolerance is None else args.tolerance
    worst = 0.0
    for variant in gc.variants:
        for name, err in grad_check(variant, gc.tiny).items():
            worst = max(worst, err)
            print(f"{variant}\t{name}\t{err:.3e}\t{'ok' if err <= tol else 'FAIL'}")
    ok = worst <= tol
    print(f"max relative error {worst:.3e} (tolerance {tol:g}): {'pass' if ok else 'fail'}")
    return 0 if ok else 3


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    data = load_dataset(cfg)
    a = cfg.ablate
    rows = ablate(data, cfg.train_config(), a.seeds, a.epochs, a.lambdas, a.measure_cider)
    table = ablation_table(rows, a.seeds)
    _write(os.path.join(_out_dir(cfg), ABLATION), table)
    sys.stdout.write(table)
    return 0


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guidecap", description="Guided attention image captioning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("caption", help="caption every record of a dataset file")
    c.add_argument("checkpoint")
    c.add_argument("data")
    c.add_argument("-o", "--output")
    c.add_argument("--beam", type=int, default=3, help="beam width (default 3)")
    c.add_argument("--greedy", action="store_true")
    c.add_argument("--max-len", type=int, default=30)
    c.add_argument("--ensemble", nargs="*", metavar="CHECKPOINT",
                   help="average with these extra checkpoints (none: ensemble of one)")
    c.set_defaults(func=cmd_caption)

    e = sub.add_parser("evaluate", help="score a caption file against a dataset file")
    e.add_argument("captions")
    e.add_argument("references")
    e.add_argument("-o", "--output", help="write OUTPUT.txt and OUTPUT.kv")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gradcheck", help="compare backward against finite differences")
    g.add_argument("config", nargs="?")
    g.add_argument("--tolerance", type=float)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="guidance ablation arms and lambda sweep")
    a.add_argument("config")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "greedy", False) and args.ensemble is not None:
        print("guidecap: --greedy and --ensemble are exclusive", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except GuidecapError as exc:
        print(f"guidecap: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"guidecap: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
