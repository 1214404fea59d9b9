"""Command-line pipeline driver.

Subcommands: gen-synth, pretrain, finetune, predict, ensemble, evaluate.
Every command takes an optional ``--config FILE`` of ``key = value`` lines
(``#`` comments allowed); explicit flags override file values, unknown keys
are rejected, and the effective configuration is echoed into the output
directory so any run can be reproduced bit-for-bit from its artifacts.

Exit codes: 0 success, 1 input/config error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import ensemble as ensemble_mod
from . import evaluation, rtd, training
from .backbone import BackboneConfig, Encoder
from .data import (
    GrammarConfig,
    Label,
    Pattern,
    SyntheticGrammar,
    SyntheticTaskConfig,
    Vocabulary,
    build_vocabulary,
    expand,
    generate_synthetic_task,
    load_instances,
    load_labels,
    load_scores,
    write_instances_tsv,
    write_labels_tsv,
    write_scores_tsv,
)
from .errors import ConfigError, InputError, NumericError, PlausifillError


@dataclass(frozen=True)
class Opt:
    name: str
    type: object  # float, int, str, bool, or "paths"
    default: object = None
    help: str = ""
    required: bool = False


_COMMON_OUT = [
    Opt("out", str, required=True, help="output directory for this run"),
    Opt("force", bool, False, help="overwrite a non-empty output directory"),
]

OPTIONS: dict[str, list[Opt]] = {
    "gen-synth": [
        *_COMMON_OUT,
        Opt("seed", int, 0),
        Opt("train_instances", int, 800),
        Opt("dev_instances", int, 320),
        Opt("test_instances", int, 320),
        Opt("n_classes", int, 6),
        Opt("nouns_per_class", int, 4),
        Opt("verbs_per_class", int, 4),
        Opt("label_skew", float, 0.0),
        Opt("corpus_sentences", int, 3000),
        Opt("len_min", int, 6),
        Opt("len_max", int, 21),
        Opt("vocab_cap", int, 512),
        Opt("placeholder", str, data_mod.PLACEHOLDER),
    ],
    "pretrain": [
        *_COMMON_OUT,
        Opt("data", str, required=True, help="gen-synth output directory"),
        Opt("seed", int, 0),
        Opt("steps", int, 1500),
        Opt("batch_size", int, 32),
        Opt("learning_rate", float, 1e-3),
        Opt("warmup_ratio", float, 0.1),
        Opt("mask_rate", float, 0.15),
        Opt("activation", str, "gelu"),
        Opt("weight_decay", float, 0.01),
        Opt("clip_norm", float, 1.0),
        Opt("holdout_fraction", float, 0.1),
        Opt("rtd_loss_weight", float, 1.0),
        Opt("vocab_size", int, 512),
        Opt("d_model", int, 64),
        Opt("n_layers", int, 2),
        Opt("n_heads", int, 4),
        Opt("d_ff", int, 256),
        Opt("max_seq_len", int, 128),
        Opt("dropout_p", float, 0.1),
        Opt("gen_d_model", int, 32),
        Opt("gen_n_layers", int, 1),
        Opt("gen_n_heads", int, 2),
        Opt("gen_d_ff", int, 64),
    ],
    "finetune": [
        *_COMMON_OUT,
        Opt("data", str, required=True, help="gen-synth output directory"),
        Opt("checkpoint", str, required=True),
        Opt("task", str, required=True, help="classification or regression"),
        Opt("learning_rate", float, 1e-5),
        Opt("batch_size", int, 32),
        Opt("epochs", int, 5),
        Opt("warmup_ratio", float, 0.1),
        Opt("weight_decay", float, 0.01),
        Opt("dropout_p", float, 0.1),
        Opt("head_dropout_p", float, 0.1),
        Opt("seed", int, 0),
        Opt("lm_head_reuse", bool, True),
        Opt("freeze_lm_head", bool, False),
        Opt("clip_norm", float, 1.0),
        Opt("grid", bool, False, help="expand the lr x batch grid into one run each"),
        Opt("grid_learning_rates", str, "5e-6,7e-6,9e-6,1e-5"),
        Opt("grid_batch_sizes", str, "32,48,64"),
        Opt("jobs", int, 1, help="parallel workers for grid runs"),
    ],
    "predict": [
        *_COMMON_OUT,
        Opt("checkpoint", str, required=True),
        Opt("instances", str, required=True),
        Opt("vocab", str, required=True),
        Opt("model_id", str, None, help="defaults to the checkpoint file stem"),
        Opt("batch_size", int, 64),
        Opt("placeholder", str, data_mod.PLACEHOLDER),
    ],
    "ensemble": [
        *_COMMON_OUT,
        Opt("mode", str, "select_top1", help="standard, select_top1, or mean_topk"),
        Opt("k", int, None, help="members to average for mean_topk"),
        Opt("test_pred", "paths", required=True),
        Opt("test_instances", str, required=True),
        Opt("dev_pred", "paths", None, help="required for the pattern-aware modes"),
        Opt("dev_gold", str, None),
        Opt("dev_instances", str, None),
    ],
    "evaluate": [
        *_COMMON_OUT,
        Opt("pred", str, required=True),
        Opt("gold", str, required=True),
        Opt("instances", str, required=True),
    ],
}


# -- config plumbing ----------------------------------------------------------


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = stripped.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(opt: Opt, raw: str):
    if opt.type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"option {opt.name}: expected a boolean, got {raw!r}")
    if opt.type == "paths":
        return raw.split()
    try:
        return opt.type(raw)
    except ValueError:
        raise ConfigError(f"option {opt.name}: cannot parse {raw!r}")


def _merge_config(command: str, args: argparse.Namespace) -> dict:
    spec = {opt.name: opt for opt in OPTIONS[command]}
    merged = {opt.name: opt.default for opt in OPTIONS[command]}
    if args.config:
        for key, raw in _parse_config_file(args.config).items():
            if key not in spec:
                raise ConfigError(f"{args.config}: unknown config key {key!r}")
            merged[key] = _coerce(spec[key], raw)
    for name in spec:
        value = getattr(args, name)
        if value is not None:
            merged[name] = value
    for opt in OPTIONS[command]:
        if opt.required and merged[opt.name] is None:
            raise ConfigError(f"missing required option --{opt.name.replace('_', '-')}")
    return merged


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _prepare_outdir(cfg: dict) -> str:
    out = cfg["out"]
    if os.path.isdir(out) and os.listdir(out) and not cfg["force"]:
        raise ConfigError(f"output directory {out!r} is not empty (use --force to overwrite)")
    os.makedirs(out, exist_ok=True)
    # 'out', 'force' and 'jobs' are invocation mechanics, not run semantics;
    # leaving them out keeps re-runs byte-identical wherever and however they run
    with open(os.path.join(out, "effective_config.txt"), "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            if cfg[key] is not None and key not in ("out", "force", "jobs"):
                fh.write(f"{key} = {_format_value(cfg[key])}\n")
    return out


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out: str, payload: dict) -> None:
    files = {
        name: _sha256(os.path.join(out, name))
        for name in sorted(os.listdir(out))
        if name != "manifest.json" and os.path.isfile(os.path.join(out, name))
    }
    payload = dict(payload, files=files)
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _patterns_for_examples(instances_path: str, placeholder: str = data_mod.PLACEHOLDER):
    patterns: dict[str, Pattern] = {}
    for inst in load_instances(instances_path, placeholder=placeholder):
        for k in range(1, 6):
            patterns[f"{inst.id}_{k}"] = inst.pattern
    return patterns


# -- commands -----------------------------------------------------------------


def cmd_gen_synth(cfg: dict) -> int:
    out = _prepare_outdir(cfg)
    grammar_cfg = GrammarConfig(
        n_classes=cfg["n_classes"],
        nouns_per_class=cfg["nouns_per_class"],
        verbs_per_class=cfg["verbs_per_class"],
    )
    task_cfg = SyntheticTaskConfig(
        n_train=cfg["train_instances"], n_dev=cfg["dev_instances"],
        n_test=cfg["test_instances"], seed=cfg["seed"], label_skew=cfg["label_skew"],
        grammar=grammar_cfg, placeholder=cfg["placeholder"],
    )
    task = generate_synthetic_task(task_cfg)
    vocab = build_vocabulary(task.train.instances, cap=cfg["vocab_cap"],
                             placeholder=cfg["placeholder"])
    vocab.save(os.path.join(out, "vocab.tsv"))

    corpus_cfg = rtd.SyntheticCorpusConfig(
        n_sentences=cfg["corpus_sentences"], len_min=cfg["len_min"],
        len_max=cfg["len_max"], vocab_size=cfg["vocab_cap"], seed=cfg["seed"],
    )
    corpus = rtd.generate_corpus(corpus_cfg, task.grammar, vocab)
    rtd.write_corpus(os.path.join(out, "corpus.txt"), corpus)

    counts = {"vocab_size": len(vocab), "corpus_sentences": len(corpus)}
    for split_name, split in (("train", task.train), ("dev", task.dev), ("test", task.test)):
        write_instances_tsv(os.path.join(out, f"{split_name}_instances.tsv"), split.instances)
        write_labels_tsv(os.path.join(out, f"{split_name}_labels.tsv"), split.labels)
        write_scores_tsv(os.path.join(out, f"{split_name}_scores.tsv"), split.scores)
        counts[f"{split_name}_instances"] = len(split.instances)
        counts[f"{split_name}_examples"] = len(split.labels)

    _write_manifest(out, {"command": "gen-synth", "seed": cfg["seed"], "counts": counts})
    print(f"gen-synth: wrote {counts['train_instances']} train instances "
          f"({counts['train_examples']} examples) to {out}")
    return 0


def cmd_pretrain(cfg: dict) -> int:
    out = _prepare_outdir(cfg)
    vocab = Vocabulary.load(os.path.join(cfg["data"], "vocab.tsv"))
    corpus = rtd.read_corpus(os.path.join(cfg["data"], "corpus.txt"))
    if len(vocab) > cfg["vocab_size"]:
        raise ConfigError(
            f"vocab has {len(vocab)} entries; raise --vocab-size (currently {cfg['vocab_size']})"
        )
    backbone_cfg = BackboneConfig(
        vocab_size=cfg["vocab_size"], d_model=cfg["d_model"], n_layers=cfg["n_layers"],
        n_heads=cfg["n_heads"], d_ff=cfg["d_ff"], max_seq_len=cfg["max_seq_len"],
        dropout_p=cfg["dropout_p"],
    )
    encoder = Encoder(backbone_cfg, seed=cfg["seed"])
    generator = rtd.MlmGenerator(
        cfg["vocab_size"], cfg["max_seq_len"], seed=cfg["seed"] + 1,
        d_model=cfg["gen_d_model"], n_layers=cfg["gen_n_layers"],
        n_heads=cfg["gen_n_heads"], d_ff=cfg["gen_d_ff"], sample_limit=len(vocab),
    )
    pre_cfg = rtd.PretrainConfig(
        steps=cfg["steps"], batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
        warmup_ratio=cfg["warmup_ratio"], mask_rate=cfg["mask_rate"], seed=cfg["seed"],
        activation=cfg["activation"], weight_decay=cfg["weight_decay"],
        clip_norm=cfg["clip_norm"], holdout_fraction=cfg["holdout_fraction"],
        rtd_loss_weight=cfg["rtd_loss_weight"],
    )
    result = rtd.pretrain(encoder, generator, corpus, pre_cfg)
    training.save_checkpoint(result.checkpoint, os.path.join(out, "pretrained.ckpt"))
    with open(os.path.join(out, "train_log.tsv"), "w", encoding="utf-8") as fh:
        for step, lr, total, _, _ in result.step_log:
            fh.write(f"{step}\t{lr!r}\t{total!r}\n")
    with open(os.path.join(out, "rtd_eval.txt"), "w", encoding="utf-8") as fh:
        for tag, ev in (("before", result.eval_before), ("after", result.eval_after)):
            fh.write(
                f"{tag}\taccuracy={ev.accuracy!r}\tloss_sum={ev.loss_sum!r}\t"
                f"majority_bound={ev.majority_bound!r}\tn_tokens={ev.n_tokens}\t"
                f"true_flag_fraction={ev.true_flag_fraction!r}\n"
            )
    print(f"pretrain: held-out token accuracy {result.eval_after.accuracy:.4f} "
          f"(majority-bound loss {result.eval_after.majority_bound:.1f}, "
          f"model loss {result.eval_after.loss_sum:.1f})")
    return 0


def _load_split_examples(data_dir: str, split: str, vocab: Vocabulary, max_seq_len: int,
                         placeholder: str = data_mod.PLACEHOLDER):
    instances = load_instances(os.path.join(data_dir, f"{split}_instances.tsv"),
                               placeholder=placeholder)
    labels = load_labels(os.path.join(data_dir, f"{split}_labels.tsv"))
    scores = load_scores(os.path.join(data_dir, f"{split}_scores.tsv"))
    return expand(instances, vocab, max_seq_len, labels=labels, scores=scores,
                  placeholder=placeholder)


def _write_finetune_artifacts(out: str, result: training.FineTuneResult,
                              steps_per_epoch: int) -> None:
    training.save_checkpoint(result.checkpoint, os.path.join(out, "finetuned.ckpt"))
    with open(os.path.join(out, "train_log.tsv"), "w", encoding="utf-8") as fh:
        for step, lr, mean_loss, _ in result.step_log:
            fh.write(f"{step}\t{lr!r}\t{mean_loss!r}\n")
            epoch, offset = divmod(step + 1, steps_per_epoch)
            if offset == 0:
                fh.write(f"epoch\t{epoch - 1}\tdev\t{result.dev_history[epoch - 1]!r}\n")
    with open(os.path.join(out, "dev_history.tsv"), "w", encoding="utf-8") as fh:
        for epoch, value in enumerate(result.dev_history):
            fh.write(f"{epoch}\t{value!r}\n")


def _single_finetune(cfg: dict, out: str) -> training.FineTuneResult:
    checkpoint = training.load_checkpoint(cfg["checkpoint"])
    vocab = Vocabulary.load(os.path.join(cfg["data"], "vocab.tsv"))
    max_seq_len = checkpoint.architecture["max_seq_len"]
    train = _load_split_examples(cfg["data"], "train", vocab, max_seq_len)
    dev = _load_split_examples(cfg["data"], "dev", vocab, max_seq_len)
    train_cfg = training.TrainConfig(
        task=cfg["task"], learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"],
        epochs=cfg["epochs"], warmup_ratio=cfg["warmup_ratio"],
        weight_decay=cfg["weight_decay"], dropout_p=cfg["dropout_p"],
        head_dropout_p=cfg["head_dropout_p"], seed=cfg["seed"],
        lm_head_reuse=cfg["lm_head_reuse"], freeze_lm_head=cfg["freeze_lm_head"],
        clip_norm=cfg["clip_norm"],
    )
    result = training.finetune(checkpoint, train, dev, train_cfg)
    steps_per_epoch = len(result.step_log) // train_cfg.epochs
    _write_finetune_artifacts(out, result, steps_per_epoch)
    return result


def _grid_worker(payload):
    cfg, run_dir = payload
    result = _single_finetune(cfg, run_dir)
    return cfg["learning_rate"], cfg["batch_size"], max(result.dev_history)


def cmd_finetune(cfg: dict) -> int:
    out = _prepare_outdir(cfg)
    if not cfg["grid"]:
        result = _single_finetune(cfg, out)
        best = max(result.dev_history)
        print(f"finetune[{cfg['task']}]: dev metric per epoch "
              f"{[round(v, 4) for v in result.dev_history]} (best {best:.4f})")
        return 0

    lrs = [float(x) for x in cfg["grid_learning_rates"].split(",") if x.strip()]
    batches = [int(x) for x in cfg["grid_batch_sizes"].split(",") if x.strip()]
    runs = []
    for lr in lrs:
        for bsz in batches:
            run_cfg = dict(cfg, learning_rate=lr, batch_size=bsz, grid=False)
            run_dir = os.path.join(out, f"lr{lr:g}_bsz{bsz}")
            os.makedirs(run_dir, exist_ok=True)
            run_cfg["out"] = run_dir
            runs.append((run_cfg, run_dir))

    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_grid_worker, runs))
    else:
        results = [_grid_worker(run) for run in runs]

    with open(os.path.join(out, "grid_manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("model_id\trun_dir\tbest_dev\n")
        for (run_cfg, run_dir), (lr, bsz, best) in zip(runs, results):
            model_id = f"LR:{lr:g}, BSZ:{bsz}"
            fh.write(f"{model_id}\t{os.path.basename(run_dir)}\t{best!r}\n")
    print(f"finetune --grid: completed {len(runs)} runs under {out}")
    return 0


def cmd_predict(cfg: dict) -> int:
    out = _prepare_outdir(cfg)
    checkpoint = training.load_checkpoint(cfg["checkpoint"])
    model = training.model_from_checkpoint(checkpoint)
    task = checkpoint.architecture["task"]
    vocab = Vocabulary.load(cfg["vocab"])
    instances = load_instances(cfg["instances"], placeholder=cfg["placeholder"])
    examples = expand(instances, vocab, checkpoint.architecture["max_seq_len"],
                      placeholder=cfg["placeholder"])
    preds = model.predict_examples(examples, task, batch_size=cfg["batch_size"])

    model_id = cfg["model_id"] or os.path.splitext(os.path.basename(cfg["checkpoint"]))[0]
    patterns = {ex.example_id: ex.pattern for ex in examples}
    pset = ensemble_mod.PredictionSet(model_id, task, preds, patterns)
    ensemble_mod.write_predictions_tsv(pset, os.path.join(out, f"{model_id}.tsv"))
    if task == "classification":
        labels = {eid: Label(v).name for eid, v in pset.predicted_labels().items()}
        with open(os.path.join(out, f"{model_id}_labels.tsv"), "w", encoding="utf-8") as fh:
            for eid in sorted(labels):
                fh.write(f"{eid}\t{labels[eid]}\n")
    print(f"predict: wrote {len(preds)} {task} predictions for model {model_id!r}")
    return 0


def cmd_ensemble(cfg: dict) -> int:
    out = _prepare_outdir(cfg)
    test_patterns = _patterns_for_examples(cfg["test_instances"])
    test_sets = [
        ensemble_mod.read_predictions_tsv(path).attach_patterns(test_patterns)
        for path in cfg["test_pred"]
    ]

    if cfg["mode"] == "standard":
        result = ensemble_mod.standard_ensemble(test_sets, model_id="ensembled")
        ensemble_mod.write_predictions_tsv(result, os.path.join(out, "ensembled.tsv"))
        print(f"ensemble[standard]: combined {len(test_sets)} sets "
              f"over {len(result.entries)} examples")
        return 0

    if not (cfg["dev_pred"] and cfg["dev_gold"] and cfg["dev_instances"]):
        raise ConfigError("pattern-aware modes need --dev-pred, --dev-gold and --dev-instances")
    dev_patterns = _patterns_for_examples(cfg["dev_instances"])
    dev_sets = [
        ensemble_mod.read_predictions_tsv(path).attach_patterns(dev_patterns)
        for path in cfg["dev_pred"]
    ]
    task = dev_sets[0].task
    if task == "classification":
        dev_gold = {eid: label.value for eid, label in load_labels(cfg["dev_gold"]).items()}
    else:
        dev_gold = load_scores(cfg["dev_gold"])

    result, spec = ensemble_mod.pattern_aware_ensemble(
        dev_sets, dev_gold, test_sets, mode=cfg["mode"], k=cfg["k"]
    )
    ensemble_mod.write_predictions_tsv(result, os.path.join(out, "ensembled.tsv"))
    with open(os.path.join(out, "pattern_ensemble_audit.txt"), "w", encoding="utf-8") as fh:
        fh.write(spec.to_text())
    winners = {p.value: r.chosen for p, r in spec.rankings.items()}
    print(f"ensemble[{cfg['mode']}]: per-pattern choices {winners}")
    return 0


def _read_predicted_labels(path) -> dict[str, int]:
    try:
        pset = ensemble_mod.read_predictions_tsv(path)
    except (InputError, ValueError):
        return {eid: label.value for eid, label in load_labels(path).items()}
    if pset.task == "classification":
        return pset.predicted_labels()
    raise InputError(f"{path}: expected labels or class probabilities")


def cmd_evaluate(cfg: dict) -> int:
    out = _prepare_outdir(cfg)
    patterns = _patterns_for_examples(cfg["instances"])
    try:
        gold_labels = load_labels(cfg["gold"])
        task = "classification"
    except PlausifillError:
        gold_labels = None
        task = "regression"

    if task == "classification":
        gold = {eid: label.value for eid, label in gold_labels.items()}
        pred = _read_predicted_labels(cfg["pred"])
    else:
        gold = load_scores(cfg["gold"])
        pset = ensemble_mod.read_predictions_tsv(cfg["pred"])
        if pset.task != "regression":
            raise InputError(f"{cfg['pred']}: expected scores to match the score gold file")
        pred = pset.entries

    report = evaluation.per_pattern_report(pred, gold, patterns, task)
    with open(os.path.join(out, "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_tsv())
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    if task == "classification":
        counts = {p: {label: 0 for label in Label} for p in Pattern}
        for eid, value in gold.items():
            counts[patterns[eid]][Label(value)] += 1
        with open(os.path.join(out, "label_distribution.tsv"), "w", encoding="utf-8") as fh:
            fh.write(evaluation.distribution_tsv(counts))
    print(f"evaluate[{report.metric_name}]: overall {report.overall:.4f} on {report.n} examples")
    return 0


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plausifill",
        description="Cloze-filler plausibility pipeline: synthetic data, RTD pretraining, "
                    "fine-tuning, prediction, ensembling, evaluation.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, options in OPTIONS.items():
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", default=None, help="key = value config file")
        for opt in options:
            flag = "--" + opt.name.replace("_", "-")
            if opt.type is bool:
                sub.add_argument(flag, dest=opt.name, default=None,
                                 action=argparse.BooleanOptionalAction, help=opt.help)
            elif opt.type == "paths":
                sub.add_argument(flag, dest=opt.name, default=None, nargs="+", help=opt.help)
            else:
                sub.add_argument(flag, dest=opt.name, default=None, type=opt.type,
                                 help=opt.help)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"error (numeric): {exc}", file=sys.stderr)
        return 2
    except (PlausifillError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
