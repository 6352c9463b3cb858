"""Command-line interface: prep, train, eval, generate, serve.

Exit codes: 0 success, 1 usage error (bad flags, missing files, malformed
config), 2 runtime error. Flag values override config-file values, which
override the ``EMPATHIA_SEED`` environment fallback (seed only) and the
built-in defaults.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from .corpus import (build_classifier_vocab, build_examples, build_vocab,
                     encode_context_pair, load_corpus)
from .errors import ConfigError, EmpathiaError
from .training import Checkpoint, TrainConfig, evaluate, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _flag_name(field_name):
    return "--" + field_name.replace("_", "-")


def _add_config_flags(parser):
    for fld in dataclasses.fields(TrainConfig):
        ftype = {int: int, float: float, str: str}.get(
            {"int": int, "float": float, "str": str}.get(fld.type, fld.type), str)
        parser.add_argument(_flag_name(fld.name), dest=fld.name, type=ftype,
                            default=None,
                            help=f"{fld.name} (default: {fld.default})")


def build_parser():
    parser = _Parser(prog="empathia",
                     description="Joint emotion identification and "
                                 "empathetic response generation")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p_prep = sub.add_parser("prep",
                            help="build vocabulary and label files")
    p_prep.add_argument("--data", required=True, help="corpus CSV or directory")
    p_prep.add_argument("--out", required=True, help="output directory")
    p_prep.add_argument("--min-freq", dest="min_freq", type=int,
                        default=TrainConfig.min_freq,
                        help=f"min token frequency (default: {TrainConfig.min_freq})")
    p_prep.add_argument("--max-len", dest="max_len", type=int,
                        default=TrainConfig.max_len,
                        help=f"max sequence length (default: {TrainConfig.max_len})")

    p_train = sub.add_parser("train",
                             help="train the joint model")
    p_train.add_argument("--config", help="config file (key=value lines)")
    p_train.add_argument("--data", required=True, help="corpus CSV or directory")
    p_train.add_argument("--out", required=True, help="checkpoint output directory")
    p_train.add_argument("--resume", help="checkpoint directory to resume from")
    _add_config_flags(p_train)

    p_eval = sub.add_parser("eval",
                            help="evaluate a checkpoint on a corpus split")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_eval.add_argument("--data", required=True, help="corpus CSV or directory")
    p_eval.add_argument("--split", default="test",
                        choices=("train", "valid", "test"),
                        help="corpus split (default: test)")
    p_eval.add_argument("--json", action="store_true",
                        help="print the report as JSON instead of a table")

    p_gen = sub.add_parser("generate",
                           help="generate one response for a context")
    p_gen.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_gen.add_argument("--context", required=True, help="dialogue context text")

    p_serve = sub.add_parser("serve",
                             help="run the HTTP inference service")
    p_serve.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_serve.add_argument("--port", type=int, default=8080,
                         help="listen port (default: 8080)")
    p_serve.add_argument("--host", default="127.0.0.1",
                         help="bind address (default: 127.0.0.1)")
    return parser


def _require_path(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _resolve_config(args):
    values = {}
    if args.config:
        _require_path(args.config, "config file")
        with open(args.config, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{args.config}:{lineno}: expected key=value")
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()
    env_seed = os.environ.get("EMPATHIA_SEED")
    if env_seed is not None and "seed" not in values:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"EMPATHIA_SEED must be an integer, got {env_seed!r}")
    overrides = {}
    for fld in dataclasses.fields(TrainConfig):
        val = getattr(args, fld.name, None)
        if val is not None:
            overrides[fld.name] = val
    return TrainConfig.from_mapping(values, overrides)


def _cmd_prep(args):
    _require_path(args.data, "corpus")
    conversations, labels = load_corpus(args.data, "train")
    raw, skipped = build_examples(conversations, max_len=args.max_len)
    gen_vocab = build_vocab(raw, args.min_freq)
    cls_vocab = build_classifier_vocab(raw)
    os.makedirs(args.out, exist_ok=True)
    gen_vocab.save(os.path.join(args.out, "vocab.txt"))
    cls_vocab.save(os.path.join(args.out, "cls_vocab.txt"))
    labels.save(os.path.join(args.out, "labels.txt"))
    print(f"conversations: {len(conversations)} (skipped {skipped})")
    print(f"examples: {len(raw)}")
    print(f"labels: {len(labels)}")
    print(f"generation vocab: {len(gen_vocab)} "
          f"({len(gen_vocab) - len(gen_vocab.RESERVED)} corpus tokens)")
    print(f"classifier vocab: {len(cls_vocab)}")
    return 0


def _cmd_train(args):
    config = _resolve_config(args)
    _require_path(args.data, "corpus")
    if args.resume:
        _require_path(args.resume, "resume checkpoint")
    result = train(config, args.data, args.out, resume_from=args.resume,
                   log=print)
    print(f"final checkpoint: {result.final_path}")
    print(f"best checkpoint:  {result.best_path}")
    return 0


def _cmd_eval(args):
    _require_path(args.ckpt, "checkpoint")
    _require_path(args.data, "corpus")
    ckpt = Checkpoint.load(args.ckpt)
    report = evaluate(ckpt, args.data, args.split)
    if args.json:
        print(report.to_json(indent=2))
    else:
        print(report.to_table())
    return 0


def _cmd_generate(args):
    _require_path(args.ckpt, "checkpoint")
    if not args.context.strip():
        raise UsageError("--context must be non-empty")
    ckpt = Checkpoint.load(args.ckpt)
    ctx_ids, cls_ids, _ = encode_context_pair(
        [args.context], ckpt.gen_vocab, ckpt.cls_vocab, ckpt.config.max_len)
    token_ids, emo_probs = ckpt.model.predict_single(ctx_ids, cls_ids)
    emo_id = int(np.argmax(emo_probs))
    print(f"response: {' '.join(ckpt.gen_vocab.decode(token_ids))}")
    print(f"emotion: {ckpt.labels.name(emo_id)} "
          f"(p={float(emo_probs[emo_id]):.4f})")
    return 0


def _cmd_serve(args):
    from .service import serve
    _require_path(args.ckpt, "checkpoint")
    ckpt = Checkpoint.load(args.ckpt)
    print(f"serving {args.ckpt} on http://{args.host}:{args.port}")
    serve(ckpt, host=args.host, port=args.port)
    return 0


_COMMANDS = {"prep": _cmd_prep, "train": _cmd_train, "eval": _cmd_eval,
             "generate": _cmd_generate, "serve": _cmd_serve}


def run(argv=None) -> int:
    """Dispatch a command line; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except KeyboardInterrupt:
        return 130
    except EmpathiaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
