"""Command-line entry point: build, compose, run, oracle, verify.

Exit codes:
  0  success
  1  a verify suite failed
  2  input symbol not in the alphabet
  3  input longer than the spec's maximum length
  4  unknown recipe, oracle or suite name
  5  invalid parameters or incompatible specs
  6  unreadable or malformed spec file
  7  numerical precondition violated at run time (fully masked row, zero-variance norm)
  64 command-line usage error
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import assembly, attention, ffn, norm, oracles, programs
from .interpreter import run, trace_to_json
from .ir import (
    WEIGHTINGS, LengthBoundError, MaskedRowError, ParameterError, PayloadError, SingularNormError,
    SpecError, StreamLayout, TransformerSpec, UnknownSymbolError, VersionError, fragment_to_dict,
    load_document, serialize,
)
from .verify import SUITES, default_seed

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_UNKNOWN_SYMBOL = 2
EXIT_LENGTH_BOUND = 3
EXIT_UNKNOWN_NAME = 4
EXIT_BAD_PARAMS = 5
EXIT_BAD_FILE = 6
EXIT_RUNTIME = 7
EXIT_USAGE = 64


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _RecipeParser(_Parser):
    # Bad recipe parameters are parameter errors, not usage errors.
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_BAD_PARAMS)


# ---------------------------------------------------------------- recipe registry

@dataclass
class Param:
    name: str
    type: type = float
    default: object = None
    choices: tuple | None = None
    help: str = ""


@dataclass
class Recipe:
    build: object          # kwargs -> (object, layout or None)
    params: list = field(default_factory=list)
    help: str = ""


def _floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def _table(bits: str) -> ffn.BooleanTable:
    bits = bits.strip()
    m = max(len(bits).bit_length() - 1, 0)
    return ffn.BooleanTable(m, tuple(int(c) for c in bits))


def _block(b):
    return b.layers, b.layout


def _hash_fragment():
    lay = StreamLayout()
    lay.allocate("pre", 4)
    lay.allocate("hash", 4)
    return (norm.build_hash_layer(lay.d, lay.indices("pre"), lay.indices("hash")),), lay


def _lookup(encoding, n, max_len, m, seed, eps):
    if max_len is None:
        max_len = n
    if max_len is not None and n is not None and n > max_len:
        raise ParameterError(f"problem length {n} exceeds maximum length {max_len}")
    return _block(attention.build_lookup(encoding, max_len, m, default_seed() if seed is None else seed,
                                         eps))


RECIPES = {
    "ffn.identity": Recipe(lambda d: (ffn.build_identity(d), None), [Param("d", int, 1)]),
    "ffn.zero": Recipe(lambda d: (ffn.build_zero(d), None), [Param("d", int, 1)]),
    "ffn.minmax": Recipe(lambda kind: (ffn.build_minmax(kind), None),
                         [Param("kind", str, "max", ("min", "max"))]),
    "ffn.add": Recipe(lambda: (ffn.build_add(), None)),
    "ffn.subtract": Recipe(lambda: (ffn.build_subtract(), None)),
    "ffn.scale": Recipe(lambda c: (ffn.build_scale(c), None), [Param("c", float, 1.0)]),
    "ffn.mul": Recipe(lambda activation: (ffn.build_mul_gelu(activation), None),
                      [Param("activation", str, "gelu-exact", ("gelu-exact", "gelu-tanh"))]),
    "ffn.comparator": Recipe(
        lambda kind, eps, parameterized: (ffn.build_comparator(kind, eps, parameterized), None),
        [Param("kind", str, "gt", ("gt", "ge", "eq")), Param("eps", float, None),
         Param("parameterized", bool, False)]),
    "ffn.boolean": Recipe(lambda table: (ffn.build_boolean(_table(table)), None),
                          [Param("table", str, "0001", help="truth table bits, first input most significant")]),
    "ffn.conditional": Recipe(lambda: (ffn.build_conditional(), None)),
    "ffn.cpwl": Recipe(lambda xs, ys: (ffn.build_cpwl(ffn.CpwlKnots(_floats(xs), _floats(ys))), None),
                       [Param("xs", str, "0,1"), Param("ys", str, "0,1")]),
    "ffn.clip": Recipe(lambda delta, d: (ffn.build_clip(delta, d), None),
                       [Param("delta", float, 1.0), Param("d", int, 1)]),
    "attn.identity": Recipe(lambda d: (attention.build_attn_identity(d), None), [Param("d", int, 1)]),
    "attn.average": Recipe(lambda d, masking: (attention.build_average(d, masking), None),
                           [Param("d", int, 1), Param("masking", str, "future", ("none", "future"))]),
    "attn.first": Recipe(lambda: _block(attention.build_first())),
    "attn.lookup": Recipe(_lookup, [
        Param("encoding", str, "one-hot", attention.ENCODINGS), Param("n", int, None),
        Param("max_len", int, None), Param("m", int, None), Param("seed", int, None),
        Param("eps", float, 0.25)]),
    "attn.predecessor": Recipe(lambda variant, width: _block(attention.build_predecessor(variant, width)),
                               [Param("variant", str, "strict-mask", ("strict-mask", "alternating")),
                                Param("width", int, 1)]),
    "attn.sharpen": Recipe(lambda gamma, max_len: _block(attention.build_sharpened_lookup(max_len, gamma)),
                           [Param("gamma", float, 1.0), Param("max_len", int, 64)]),
    "norm.hash": Recipe(_hash_fragment),
    "norm.amplifier": Recipe(lambda delta, d: ((norm.build_amplifier(delta, d),), None),
                             [Param("delta", float, 0.01), Param("d", int, 2)]),
    "norm.sign-clip": Recipe(lambda delta, d: (norm.build_sign_clip(delta, d), None),
                             [Param("delta", float, 0.01), Param("d", int, 1)]),
    "program.dyck": Recipe(lambda k, depth, mode, max_len: (programs.build_dyck(k, depth, mode, max_len), None),
                           [Param("k", int, 1), Param("depth", int, None),
                            Param("mode", str, "external-check", ("external-check", "nonuniform")),
                            Param("max_len", int, None)]),
    "program.induction": Recipe(
        lambda variant, alphabet, max_len: (programs.build_induction(tuple(alphabet), variant, max_len), None),
        [Param("variant", str, "rightmost", ("rightmost", "frequent")), Param("alphabet", str, "ABCD"),
         Param("max_len", int, programs.DEFAULT_INDUCTION_MAX_LEN)]),
}


def _recipe_args(name: str, argv: list) -> dict:
    recipe = RECIPES[name]
    p = _RecipeParser(prog=f"tfrecipes build {name}", description=recipe.help)
    for prm in recipe.params:
        flag = "--" + prm.name.replace("_", "-")
        if prm.type is bool:
            p.add_argument(flag, dest=prm.name, action="store_true", help=prm.help)
        else:
            p.add_argument(flag, dest=prm.name, type=prm.type, default=prm.default,
                           choices=prm.choices, help=prm.help)
    return vars(p.parse_args(argv))


def build_recipe(name: str, argv: list | None = None):
    """Build a registered recipe; returns (object, layout or None)."""
    if name not in RECIPES:
        raise CliError(f"unknown recipe {name!r}; known: {', '.join(sorted(RECIPES))}", EXIT_UNKNOWN_NAME)
    return RECIPES[name].build(**_recipe_args(name, argv or []))


def _describe(obj) -> dict:
    if isinstance(obj, TransformerSpec):
        return {"kind": "transformer", "d": obj.d, "layers": len(obj.layers)}
    if isinstance(obj, ffn.FfnSpec):
        return {"kind": "ffn", "d_in": obj.d_in, "d_hid": obj.d_hid, "d_out": obj.d_out}
    if isinstance(obj, attention.AttentionSpec):
        return {"kind": "attention", "d": obj.d, "d_key": obj.d_key}
    return {"kind": "layers", "d": obj[0].attention.d, "layers": len(obj)}


def _document(obj, layout, meta) -> str:
    if isinstance(obj, TransformerSpec):
        return serialize(obj).decode("utf-8")
    return json.dumps(fragment_to_dict(obj, layout, meta), allow_nan=False)


# ---------------------------------------------------------------- commands

def _emit(args, payload: dict, text: str) -> None:
    if args.format == "json":
        print(json.dumps(payload))
    else:
        print(text)


def _pull_option(argv: list, flags: tuple):
    """Remove `flag value` from argv (options given after the recipe name); returns value."""
    for k, tok in enumerate(argv):
        for flag in flags:
            if tok == flag and k + 1 < len(argv):
                val = argv[k + 1]
                del argv[k:k + 2]
                return val
            if tok.startswith(flag + "="):
                del argv[k]
                return tok.split("=", 1)[1]
    return None


def cmd_build(args) -> int:
    args.params = list(args.params)
    out = _pull_option(args.params, ("-o", "--output"))
    fmt = _pull_option(args.params, ("--format",))
    args.output = out or args.output
    if fmt is not None:
        if fmt not in ("text", "json"):
            raise CliError(f"unknown format {fmt!r}", EXIT_USAGE)
        args.format = fmt
    obj, layout = build_recipe(args.recipe, args.params)
    if layout is None and isinstance(obj, TransformerSpec) and "layout" in obj.meta:
        layout = StreamLayout.from_dict(obj.meta["layout"], obj.d)
    doc = _document(obj, layout, {"recipe": args.recipe, "params": args.params})
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(doc)
    else:
        sys.stdout.write(doc + "\n")
    info = {"recipe": args.recipe, "output": args.output, **_describe(obj),
            "layout": layout.to_dict() if layout else None}
    text = f"{args.recipe}: " + ", ".join(f"{k}={v}" for k, v in _describe(obj).items())
    if layout is not None:
        text += "\n" + layout.summary()
    if args.output:
        _emit(args, info, text)
    else:
        print(text if args.format == "text" else json.dumps(info), file=sys.stderr)
    return EXIT_OK


def _as_layers(kind, obj):
    if kind == "layers":
        return obj
    if kind == "ffn":
        if obj.d_in != obj.d_out:
            raise CliError("only d -> d networks can stand as a layer", EXIT_BAD_PARAMS)
        return (assembly.ffn_layer(obj),)
    return (assembly.attention_layer(obj),)


def cmd_compose(args) -> int:
    (ka, a, _), (kb, b, _) = load_document(args.first), load_document(args.second)
    if (ka == "transformer") != (kb == "transformer"):
        raise CliError("cannot compose a program spec with a fragment", EXIT_BAD_PARAMS)
    if ka == "transformer":
        out = assembly.compose_specs_serial(a, b) if args.serial else \
            assembly.compose_specs_parallel(a, b, args.unchecked)
        doc = serialize(out).decode("utf-8")
    else:
        la, lb = _as_layers(ka, a), _as_layers(kb, b)
        out = assembly.serial_compose(la, lb) if args.serial else \
            assembly.parallel_compose(la, lb, unchecked=args.unchecked)
        doc = json.dumps(fragment_to_dict(out, meta={"composed": "serial" if args.serial else "parallel"}))
    with open(args.output, "w") as fh:
        fh.write(doc)
    desc = _describe(out)
    _emit(args, {"output": args.output, **desc},
          f"wrote {args.output}: " + ", ".join(f"{k}={v}" for k, v in desc.items()))
    return EXIT_OK


def _output_text(out) -> object:
    if isinstance(out, np.ndarray):
        return out.tolist()
    return out


def cmd_run(args) -> int:
    kind, spec, _ = load_document(args.spec)
    if kind != "transformer":
        raise CliError("run needs a program spec, not a fragment", EXIT_BAD_PARAMS)
    res = run(spec, args.input, args.weighting, args.precision)
    report = {"input": args.input}
    if spec.head.kind == "raw":
        report["output"] = res.final[-1].tolist()
    else:
        report["output"] = _output_text(res.output)
    if "decision" in spec.meta:
        report["decision"] = "accept" if programs.decide_final(spec, res.final, res.output) else "reject"
        report["diagnostics"] = programs.diagnostics(spec, args.input) if args.weighting is None \
            else None
        report["final_position"] = res.final[-1].tolist()
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(trace_to_json(res.trace))
        report["trace"] = args.trace
    lines = [f"output: {report['output']}"]
    if "decision" in report:
        lines.insert(0, report["decision"])
        if report["diagnostics"]:
            lines.append("diagnostics: " + ", ".join(f"{k}={v}" for k, v in report["diagnostics"].items()))
        lines.append(f"final position: {report['final_position']}")
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def _oracle(args):
    name, text = args.name, args.input
    if name == "dyck":
        return oracles.oracle_dyck(text, args.k, args.depth)
    if name == "induction":
        return oracles.oracle_induction(text, args.variant, tuple(args.alphabet) if args.alphabet else None)
    if name == "prefix-average":
        return [float(v) for v in oracles.oracle_prefix_average(_floats(text))]
    if name == "predecessor":
        return oracles.oracle_predecessor(_floats(text))
    if name == "lookup":
        return oracles.oracle_lookup([int(q) for q in _floats(text)], _floats(args.values or ""))
    if name == "gap":
        r = oracles.hardmax_softmax_gap(_floats(text))
        return {"gap": r.gap, "bound": r.bound, "gamma": r.gamma, "holds": r.holds}
    raise CliError(f"unknown oracle {name!r}", EXIT_UNKNOWN_NAME)


def cmd_oracle(args) -> int:
    result = _oracle(args)
    if isinstance(result, bool):
        text = "accept" if result else "reject"
    else:
        text = str(result)
    _emit(args, {"oracle": args.name, "input": args.input, "result": result}, text)
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    for n in names:
        if n not in SUITES:
            raise CliError(f"unknown suite {n!r}; known: {', '.join(SUITES)}, all", EXIT_UNKNOWN_NAME)
    reports = []
    for n in names:
        kw = {}
        if args.trials is not None and n in ("gap", "tiebreak", "induction"):
            kw["trials"] = args.trials
        if args.trials is not None and n == "lookup":
            kw["problems"] = args.trials
        if args.trials is not None and n == "composition":
            kw["instances"] = args.trials
        if args.max_len is not None and n in ("dyck", "induction", "lookup"):
            kw["max_len"] = args.max_len
        if n == "dyck":
            kw["k"] = args.k
            kw["depth"] = args.depth
            kw.setdefault("max_len", 12 if args.depth is None else 8)
        if args.seed is not None and n not in ("dyck",):
            kw["seed"] = args.seed
        reports.append(SUITES[n](**kw))
    ok = all(r.passed for r in reports)
    lines = []
    for r in reports:
        lines.append(f"{r.name}: {'PASS' if r.passed else 'FAIL'} ({r.checked - r.failed}/{r.checked})")
        for key, val in r.details.items():
            if isinstance(val, dict):
                lines.append(f"  {key}: {val['checked'] - val['failed']}/{val['checked']}")
            else:
                lines.append(f"  {key}: {val}")
    _emit(args, {"passed": ok, "suites": [r.to_dict() for r in reports]}, "\n".join(lines))
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


# ---------------------------------------------------------------- parser

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tfrecipes", description="Build and run hand-set transformer programs.",
                epilog="exit codes: 0 ok, 1 verify failed, 2 unknown symbol, 3 length bound, "
                       "4 unknown name, 5 bad parameters, 6 bad spec file, 7 runtime precondition, "
                       "64 usage")
    p.add_argument("--format", choices=("text", "json"), default="text")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _Parser(add_help=False)
    fmt.add_argument("--format", choices=("text", "json"), default=argparse.SUPPRESS)

    b = sub.add_parser("build", parents=[fmt], help="build a named recipe into a spec file")
    b.add_argument("recipe")
    b.add_argument("-o", "--output")
    b.add_argument("params", nargs=argparse.REMAINDER, help="recipe parameters, e.g. --kind gt --eps 0.5")
    b.set_defaults(func=cmd_build)

    c = sub.add_parser("compose", parents=[fmt], help="compose two spec files")
    mode = c.add_mutually_exclusive_group(required=True)
    mode.add_argument("--serial", action="store_true")
    mode.add_argument("--parallel", action="store_true")
    c.add_argument("first")
    c.add_argument("second")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--unchecked", action="store_true",
                   help="allow parallel composition of layers with normalization")
    c.set_defaults(func=cmd_compose)

    r = sub.add_parser("run", parents=[fmt], help="run a program spec on an input string")
    r.add_argument("spec")
    r.add_argument("input")
    r.add_argument("--trace", metavar="PATH", help="write the full JSON trace here")
    r.add_argument("--weighting", choices=WEIGHTINGS, help="override every head's weighting")
    r.add_argument("--precision", type=int, help="round activations to multiples of 2^-p")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", parents=[fmt], help="evaluate a reference implementation")
    o.add_argument("name", help="dyck, induction, prefix-average, predecessor, lookup, gap")
    o.add_argument("--input", required=True, help="string, or comma-separated numbers")
    o.add_argument("--k", type=int, default=1)
    o.add_argument("--depth", type=int)
    o.add_argument("--variant", default="rightmost", choices=("rightmost", "frequent"))
    o.add_argument("--alphabet")
    o.add_argument("--values", help="lookup values, comma-separated")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("verify", parents=[fmt], help="run self-check suites against the oracles")
    v.add_argument("suite", help=f"one of {', '.join(SUITES)}, or all")
    v.add_argument("--max-len", type=int)
    v.add_argument("--trials", type=int)
    v.add_argument("--k", type=int, default=1)
    v.add_argument("--depth", type=int)
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        code, msg = err.code, str(err)
    except UnknownSymbolError as err:
        code, msg = EXIT_UNKNOWN_SYMBOL, str(err)
    except LengthBoundError as err:
        code, msg = EXIT_LENGTH_BOUND, str(err)
    except (PayloadError, VersionError, OSError) as err:
        code, msg = EXIT_BAD_FILE, str(err)
    except (MaskedRowError, SingularNormError) as err:
        code, msg = EXIT_RUNTIME, str(err)
    except (SpecError, ValueError) as err:
        code, msg = EXIT_BAD_PARAMS, str(err)
    if args.format == "json":
        print(json.dumps({"error": msg, "exit_code": code}))
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
