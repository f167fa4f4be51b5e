"""Command line front end.

Subcommands: train, eval, predict, gradcheck, ablate, synth.  Configuration
is a flat ``section.key = value`` file; any key can be overridden through the
environment as ``DECAPROP_SECTION_KEY``.  Failures from this package exit
with status 1 and a single machine-parseable ``error:<kind>: message`` line
on stderr; argparse usage errors keep their conventional status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_jsonl, load_squad
from .encoder import Featurizer, Vocab
from .errors import ConfigError, DecapropError
from .gradcheck import run_gradcheck, threshold_for
from .model import VARIANTS, DecaProp, ModelConfig, apply_variant, build_model
from .training import (SyntheticTaskSpec, TrainConfig, evaluate, gen_synthetic,
                       run_ablation, train_model)

log = logging.getLogger("decaprop")

_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "task": SyntheticTaskSpec}


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null"):
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
                key, raw = line.split("=", 1)
                values[key.strip()] = raw
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return values


def _env_overrides() -> dict[str, str]:
    values: dict[str, str] = {}
    for name, raw in os.environ.items():
        if not name.startswith("DECAPROP_"):
            continue
        rest = name[len("DECAPROP_"):].lower()
        section, _, key = rest.partition("_")
        if section in _SECTIONS and key:
            values[f"{section}.{key}"] = raw
    return values


def load_configs(path: str | None) -> tuple[ModelConfig, TrainConfig, SyntheticTaskSpec]:
    raw = read_config_file(path) if path else {}
    raw.update(_env_overrides())
    per_section: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, value in raw.items():
        section, _, field = key.partition(".")
        if section not in _SECTIONS or not field:
            raise ConfigError(f"unknown config key {key!r}; use section.key with "
                              f"section in {sorted(_SECTIONS)}")
        known = {f.name for f in fields(_SECTIONS[section])}
        if field not in known:
            raise ConfigError(f"unknown config key {key!r}")
        per_section[section][field] = _parse_value(value)

    model_cfg = ModelConfig.from_dict(per_section["model"])
    train_cfg = TrainConfig.from_dict(per_section["train"])
    task = SyntheticTaskSpec(**per_section["task"])
    task.validate()
    return model_cfg, train_cfg, task


def _load_dataset(path: str, fmt: str):
    if fmt == "jsonl":
        return load_jsonl(path)
    if fmt == "squad":
        examples, dropped = load_squad(path)
        if dropped:
            log.info("dropped %d unmappable questions from %s", dropped, path)
        return examples
    raise ConfigError(f"unknown data format {fmt!r}; pick 'jsonl' or 'squad'")


def _restore_model(checkpoint_path: str) -> tuple[DecaProp, Featurizer]:
    ck = load_checkpoint(checkpoint_path)
    extra = ck["extra"]
    if "featurizer" not in extra:
        raise ConfigError(f"{checkpoint_path}: checkpoint has no featurizer state; "
                          "was it written by 'decaprop train'?")
    fz = extra["featurizer"]
    featurizer = Featurizer(Vocab(fz["tokens"]), Vocab(fz["char_tokens"]),
                            fz["max_word_len"])
    model_cfg = ModelConfig.from_dict(ck["model_config"])
    model = build_model(model_cfg, featurizer, seed=int(extra.get("seed", 0)))
    model.store.load_values(ck["params"])
    return model, featurizer


def _featurizer_extra(featurizer: Featurizer, seed: int) -> dict:
    return {"featurizer": {"tokens": featurizer.vocab.tokens[2:],
                           "char_tokens": featurizer.char_vocab.tokens[2:],
                           "max_word_len": featurizer.max_word_len},
            "seed": seed}


def cmd_train(args: argparse.Namespace) -> int:
    model_cfg, train_cfg, task = load_configs(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
        task.seed = args.seed
    if args.variant is not None:
        train_cfg.ablation = args.variant
    train_cfg.validate()
    model_cfg = apply_variant(model_cfg, train_cfg.ablation)

    if args.data:
        train_ex = _load_dataset(args.data, args.format)
        dev_ex = _load_dataset(args.dev, args.format) if args.dev else None
    else:
        log.info("no --data given; generating the synthetic span task")
        train_ex = gen_synthetic(task, "train")
        dev_ex = gen_synthetic(task, "dev")

    resume = None
    if args.resume:
        if not args.checkpoint:
            raise ConfigError("--resume needs --checkpoint")
        resume = load_checkpoint(args.checkpoint)
        model_cfg = ModelConfig.from_dict(resume["model_config"])
        fz = resume["extra"]["featurizer"]
        featurizer = Featurizer(Vocab(fz["tokens"]), Vocab(fz["char_tokens"]),
                                fz["max_word_len"])
    else:
        featurizer = Featurizer.build(train_ex + (dev_ex or []), model_cfg.max_word_len)

    model = build_model(model_cfg, featurizer, seed=train_cfg.seed)
    result = train_model(
        model, featurizer, train_ex, dev_ex, train_cfg,
        csv_path=args.out, checkpoint_path=args.checkpoint, resume=resume,
        log=log.info)
    if args.checkpoint:
        # persist the featurizer next to the final weights for eval/predict
        ck = load_checkpoint(args.checkpoint)
        save_checkpoint(args.checkpoint, model.store, model_cfg.to_dict(),
                        ck["optimizer"], ck["rng_state"], ck["train_state"],
                        extra=_featurizer_extra(featurizer, train_cfg.seed))
    log.info("finished: %d steps, best dev em %.2f", result.steps, result.best_em)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    _, train_cfg, _ = load_configs(args.config)
    model, featurizer = _restore_model(args.checkpoint)
    examples = _load_dataset(args.data, args.format)
    loss, em, f1, spans = evaluate(model, featurizer, examples, train_cfg.batch_size)
    if args.predictions:
        with open(args.predictions, "w", encoding="utf-8") as fh:
            for ex, (k, l) in zip(examples, spans):
                text = " ".join(ex.passage_tokens[k:l + 1])
                fh.write(json.dumps({"id": ex.id, "start": k, "end": l,
                                     "text": text}) + "\n")
    print(json.dumps({"loss": loss, "em": em, "f1": f1, "n": len(examples)}))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    _, train_cfg, _ = load_configs(args.config)
    model, featurizer = _restore_model(args.checkpoint)
    examples = _load_dataset(args.data, args.format)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        from .training import collate
        feats = [featurizer.example(ex) for ex in examples]
        for lo in range(0, len(examples), train_cfg.batch_size):
            batch = collate(feats[lo:lo + train_cfg.batch_size])
            for i, (k, l) in enumerate(model.predict(batch)):
                ex = examples[lo + i]
                text = " ".join(ex.passage_tokens[k:l + 1])
                out.write(json.dumps({"id": ex.id, "start": k, "end": l,
                                      "text": text}) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    names = args.scenario or None
    results = run_gradcheck(names, seed=args.seed or 0, log=None)
    failed = []
    for name, err in results.items():
        limit = args.threshold if args.threshold is not None else threshold_for(name)
        status = "ok" if err < limit else "FAIL"
        print(f"{name}: max rel err {err:.3e} [{status}]")
        if err >= limit:
            failed.append((name, err, limit))
    if failed:
        name, err, limit = failed[0]
        print(f"error:numeric: gradient check failed ({name}: {err:.3e} >= {limit})",
              file=sys.stderr)
        return 1
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    model_cfg, train_cfg, task = load_configs(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
        task.seed = args.seed
    variants = tuple(args.variant) if args.variant else VARIANTS
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown ablation {v!r}; pick from {VARIANTS}")
    rows = run_ablation(model_cfg, train_cfg, task, variants, log=log.info)
    payload = json.dumps(rows, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    _, _, task = load_configs(args.config)
    if args.seed is not None:
        task.seed = args.seed
    examples = gen_synthetic(task, args.split)
    with open(args.out, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "id": ex.id, "passage": ex.passage_tokens,
                "question": ex.question_tokens, "answer_start": ex.answer_start,
                "answer_end": ex.answer_end, "answers": ex.answer_texts}) + "\n")
    log.info("wrote %d examples to %s", len(examples), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decaprop",
        description="Densely connected attention reader: train and evaluate "
                    "span-extraction models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, data_required: bool = False) -> None:
        p.add_argument("--config", help="flat section.key=value config file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--data", required=data_required, help="dataset path")
        p.add_argument("--format", choices=("jsonl", "squad"), default="jsonl",
                       help="dataset layout (default jsonl)")

    p = sub.add_parser("train", help="fit a model")
    common(p)
    p.add_argument("--dev", help="held-out dataset for per-epoch metrics")
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--checkpoint", help="checkpoint path, written every epoch")
    p.add_argument("--resume", action="store_true",
                   help="continue from an existing --checkpoint")
    p.add_argument("--variant", choices=VARIANTS, help="ablation variant to train")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    common(p, data_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--predictions", help="also write decoded spans (jsonl)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="decode spans for a dataset")
    common(p, data_required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="output jsonl path (default stdout)")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--scenario", action="append", help="limit to named scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=None,
                   help="override every scenario's pass bar "
                        "(default: 1e-4, 5e-3 for micro_model)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train every architecture variant")
    p.add_argument("--config", help="flat section.key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", action="append", help="limit to named variants")
    p.add_argument("--out", help="write the result table (json)")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic span dataset")
    p.add_argument("--config", help="flat section.key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("train", "dev", "test"), default="train")
    p.add_argument("--out", required=True, help="output jsonl path")
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DecapropError as exc:
        print(f"error:{exc.kind}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
