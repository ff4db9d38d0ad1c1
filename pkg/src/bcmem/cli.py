"""Command-line entry point: algebra verification, gradient checks,
training, evaluation, and embedding export.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import cube_algebra as ca
from . import nn_core, quad_reg, train_eval
from .data_mnist import IdxError, load_split


def _parse_disc_set(s: str) -> list[int]:
    try:
        discs = [int(tok) for tok in s.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad discriminant list {s!r}") from None
    for d in discs:
        if d >= 0 or d % 4 not in (0, 1):
            raise argparse.ArgumentTypeError(f"{d} is not a negative form discriminant")
    return discs


def _check_group_axioms(disc: int) -> tuple[bool, dict]:
    """Exhaustive closure/identity/inverse/associativity on the reduced classes."""
    forms = ca.reduced_forms(disc)
    ident = ca.reduce(ca.principal_form(disc))
    table = {(f, g): ca.compose_forms(f, g) for f in forms for g in forms}
    closure = all(fg in forms for fg in table.values())
    identity = all(table[(ident, f)] == f and table[(f, ident)] == f for f in forms)
    inverses = all(table[(f, ca.reduce(f.inverse()))] == ident for f in forms)
    assoc = all(
        table[(table[(f, g)], h)] == table[(f, table[(g, h)])]
        for f in forms
        for g in forms
        for h in forms
    )
    detail = {
        "classes": len(forms),
        "closure": closure,
        "identity": identity,
        "inverses": inverses,
        "associativity": assoc,
    }
    return closure and identity and inverses and assoc, detail


def cmd_verify_algebra(args) -> int:
    t0 = time.time()
    rng = np.random.default_rng(args.seed)
    entries = rng.integers(-9, 10, size=(args.cubes, 8))
    equal = 0
    for row in entries:
        cube = ca.Cube(tuple(int(v) for v in row))
        q1, q2, q3 = ca.slice_forms(cube)
        if q1.discriminant() == q2.discriminant() == q3.discriminant():
            equal += 1
    report: dict = {"equal_discriminant": {"pass": equal, "total": args.cubes}}

    groups_ok = True
    report["class_groups"] = {}
    for disc in args.disc_set:
        ok, detail = _check_group_axioms(disc)
        groups_ok &= ok
        report["class_groups"][str(disc)] = detail

    eq1 = []
    for disc in args.disc_set:
        forms = ca.reduced_forms(disc)
        for i, f in enumerate(forms):
            for g in forms[i:]:
                h = ca.reduce(ca.compose_forms(f, g).inverse())
                lhs, rhs = ca.check_eq1_relation(f, g, h)
                eq1.append(
                    {"disc": disc, "f": [f.a, f.b, f.c], "g": [g.a, g.b, g.c],
                     "lhs": lhs, "rhs": rhs}
                )
    report["eq1_relation"] = eq1
    passed = equal == args.cubes and groups_ok
    report["elapsed_s"] = round(time.time() - t0, 3)

    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"equal-discriminant: {equal}/{args.cubes}")
        for disc, detail in report["class_groups"].items():
            flags = ", ".join(k for k in ("closure", "identity", "inverses", "associativity"))
            ok = all(detail[k] for k in ("closure", "identity", "inverses", "associativity"))
            print(f"D={disc}: {detail['classes']} reduced classes; {flags}: "
                  f"{'pass' if ok else 'FAIL'}")
        print("composed-discriminant report (lhs = disc(f o g), "
              "rhs = disc(f) disc(g) disc(h)^2):")
        for row in eq1:
            print(f"  D={row['disc']} f={tuple(row['f'])} g={tuple(row['g'])}: "
                  f"lhs={row['lhs']} rhs={row['rhs']}")
        print(f"result: {'PASS' if passed else 'FAIL'} ({report['elapsed_s']} s)")
    return 0 if passed else 1


def _gradcheck_suite(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errs: dict[str, float] = {}

    lin = nn_core.Sequential([nn_core.LinearLayer(6, 4, rng), nn_core.SiLULayer()])
    errs["linear_silu"] = nn_core.gradcheck_stack(lin, rng.standard_normal((5, 6)))

    bn = nn_core.Sequential([nn_core.BatchNormLayer(4)])
    errs["batchnorm"] = nn_core.gradcheck_stack(bn, rng.standard_normal((7, 4)))

    enc = nn_core.build_mlp((16, 8, 3), rng, dropout_p=0.0)
    errs["encoder_16_8_3"] = nn_core.gradcheck_stack(enc, rng.standard_normal((6, 16)))

    head = quad_reg.CubeHead(rng)
    fn, arrays = quad_reg.cube_loss_closure(head, rng.standard_normal((4, 3)))
    errs["quad_loss_cube"] = nn_core.max_rel_error(fn, arrays)

    probes = [quad_reg.ProbeQuadraticForm(rng) for _ in range(3)]
    for p in probes:
        p.A.data += 0.2 * rng.standard_normal((3, 3))
        p.A.data[:] = (p.A.data + p.A.data.T) / 2
        p.b.data += 0.2 * rng.standard_normal(3)
        p.c.data += 0.2 * rng.standard_normal()
    fn, arrays = quad_reg.probe_loss_closure(probes)
    errs["quad_loss_probe"] = nn_core.max_rel_error(fn, arrays)
    return errs


def cmd_gradcheck(args) -> int:
    errs = _gradcheck_suite(args.seed)
    worst = max(errs.values())
    if args.json:
        print(json.dumps({"errors": errs, "max": worst, "pass": worst < 1e-4}, indent=2))
    else:
        for name, err in errs.items():
            print(f"{name}: max relative error {err:.3e}")
        print(f"max relative error {worst:.3e}: {'PASS' if worst < 1e-4 else 'FAIL'}")
    return 0 if worst < 1e-4 else 1


def cmd_train(args) -> int:
    config = train_eval.TrainConfig(
        data_dir=args.data_dir,
        out=args.out,
        log=args.log,
        epochs=args.epochs,
        batch=args.batch,
        lr=args.lr,
        lam=args.lam,
        mode=args.mode,
        seed=args.seed,
        patience=args.patience,
        train_limit=args.limit,
    )
    result = train_eval.train(config)
    for r in result.reports:
        print(
            f"epoch {r.epoch:3d}  task {r.train_task_loss:.4f}  quad {r.train_quad_loss:.4f}"
            f"  val {r.val_loss:.4f}  acc {r.val_accuracy:.4f}  lr {r.lr:.6f}"
        )
    print(f"best epoch {result.best_epoch} val_loss {result.best_val_loss:.4f}")
    if result.checkpoint_path:
        print(f"checkpoint written to {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    model, _ = train_eval.load_model(args.checkpoint)
    test = load_split(args.data_dir, args.split)
    res = train_eval.evaluate(model, test)
    if args.json:
        print(json.dumps(
            {"accuracy": res.accuracy, "task_loss": res.task_loss, "residual": res.residual}
        ))
    else:
        print(f"accuracy={res.accuracy:.4f} task_loss={res.task_loss:.4f} "
              f"residual={res.residual:.6g}")
    return 0


def cmd_export_embeddings(args) -> int:
    model, _ = train_eval.load_model(args.checkpoint)
    ds = load_split(args.data_dir, args.split)
    z, labels, preds = train_eval.extract_embeddings(model, ds)
    train_eval.write_embeddings_csv(args.out, z, labels, preds)
    print(f"wrote {len(labels)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcmem",
        description="Cube-regularized MNIST classifier and quadratic-form algebra tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-algebra", help="run the exact-algebra property suites")
    p.add_argument("--cubes", type=int, default=10000, help="random cubes for the "
                   "equal-discriminant check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--disc-set", type=_parse_disc_set, default=[-23, -47, -71],
                   help="comma-separated negative discriminants")
    p.add_argument("--json", action="store_true", help="machine-readable report")
    p.set_defaults(fn=cmd_verify_algebra)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data-dir", required=True, help="directory with the four IDX files")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--mode", choices=["cube", "probe", "none"], default="cube")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--limit", type=int, default=None,
                   help="train on a random subset of this many samples")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.add_argument("--log", default=None, help="JSON-lines epoch report path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-embeddings", help="write latent CSV for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (IdxError, nn_core.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, train_eval.NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
