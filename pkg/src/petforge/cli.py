"""``petforge`` command line: data generation, pretraining, training, evaluation and reports."""
import argparse
import logging
import os
import sys

from . import harness
from .data import TrialSet
from .errors import ConfigError, NumericError, PetForgeError
from .metrics import attach_labels, compute_eer, compute_min_dcf, read_scores

log = logging.getLogger("petforge")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _config(args):
    config = harness.RunConfig.load(args.config) if args.config else harness.RunConfig()
    if args.seed is not None:
        config = config.with_(seed=args.seed)
    if args.out is not None:
        config = config.with_(out_dir=args.out)
    return config


def _progress(every):
    def report(step, loss):
        if every and step % every == 0:
            log.info("step %d loss %.5f", step, loss)
    return report


def cmd_gen_data(args, config):
    root = args.out or config.data.root
    train, evals, trials = harness.generate_data(config, root)
    print(f"wrote {len(train)} train / {len(evals)} eval utterances and {len(trials)} trials to {root}")


def cmd_pretrain(args, config):
    path, rows = harness.pretrain(config, config.out_dir, log=_progress(args.log_every))
    print(f"pretrain loss {rows[0][1]:.5f} -> {rows[-1][1]:.5f}; weights at {path}" if rows
          else f"no pretraining steps; weights at {path}")


def cmd_train(args, config):
    if args.backbone_weights:
        config = config.with_(backbone_weights=args.backbone_weights)
    result = harness.train(config, config.out_dir, resume=args.resume, stop_step=args.stop_step,
                           log=_progress(args.log_every))
    if result.log:
        print(f"trained steps {result.log[0][0]}..{result.log[-1][0]}, "
              f"final loss {result.log[-1][1]:.5f}; checkpoint at {result.checkpoint}")
    else:
        print(f"nothing to train; checkpoint at {result.checkpoint}")


def cmd_eval(args, config):
    checkpoint = args.checkpoint or config.checkpoint
    if not checkpoint:
        raise ConfigError("eval needs --checkpoint or a config 'checkpoint' entry")
    model, _ = harness.load_model(checkpoint, config)
    trials = TrialSet.read(args.trials) if args.trials else None
    result = harness.evaluate(config, model=model, trials=trials, out_dir=config.out_dir)
    print(result.line())


def cmd_score(args, config):
    trials = TrialSet.read(args.trials or config.data.path("trials"))
    scored = attach_labels(read_scores(args.scores), trials)
    result = harness.EvalResult(compute_eer(scored.scores, scored.labels),
                                compute_min_dcf(scored.scores, scored.labels), scored)
    os.makedirs(config.out_dir, exist_ok=True)
    harness.write_metrics(os.path.join(config.out_dir, "metrics.csv"), result)
    print(result.line())


def cmd_count_params(args, config):
    methods = args.methods.split(",") if args.methods else None
    rows = harness.report_params(methods, args.scale,
                                 None if args.scale == "paper" else config.backbone,
                                 None if args.scale == "paper" else config.head)
    os.makedirs(config.out_dir, exist_ok=True)
    harness.write_param_report(os.path.join(config.out_dir, "params.csv"), rows)
    print(f"{'method':<14}{'count':>12}{'fraction':>10}{'backend':>12}")
    for r in rows:
        print(f"{r['method']:<14}{r['count']:>12,}{r['fraction']:>10.2%}{r['backend']:>12,}")


def cmd_export_weights(args, config):
    checkpoint = args.checkpoint or config.checkpoint
    if not checkpoint:
        raise ConfigError("export-weights needs --checkpoint or a config 'checkpoint' entry")
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "layer_weights.csv")
    for layer, w in harness.export_layer_weights(checkpoint, path):
        print(f"layer{layer} {w:.6f}")


COMMANDS = {
    "gen-data": (cmd_gen_data, "write the synthetic corpus and trial list"),
    "pretrain": (cmd_pretrain, "masked-frame pseudo-pretraining of the backbone"),
    "train": (cmd_train, "train a method on the train corpus"),
    "eval": (cmd_eval, "score the trial list and report EER / minDCF"),
    "count-params": (cmd_count_params, "trainable-parameter report per method"),
    "export-weights": (cmd_export_weights, "softmax-normalized layer weights as CSV"),
    "score": (cmd_score, "metrics from an existing score file"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="petforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--log-every", type=int, default=0, help="log the loss every N steps")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue from")
            p.add_argument("--stop-step", type=int, help="halt before this step")
            p.add_argument("--backbone-weights", help="pretrained backbone weights file")
        if name in ("eval", "export-weights"):
            p.add_argument("--checkpoint")
        if name in ("eval", "score"):
            p.add_argument("--trials", help="trial list (default: from the config)")
        if name == "score":
            p.add_argument("--scores", required=True, help="score file 'enroll test score'")
        if name == "count-params":
            p.add_argument("--scale", choices=("paper", "desk"), default="paper")
            p.add_argument("--methods", help="comma-separated method names (default: all)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        config = _config(args)
        COMMANDS[args.command][0](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PetForgeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
