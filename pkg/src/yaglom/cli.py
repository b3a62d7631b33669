"""Command line: classify | scale | spectrum | qsd | yaglom | verify."""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import BoundaryCase, StructuralError
from .io import (
    SEED_ENV,
    DocumentError,
    RunMetadata,
    SvgPlot,
    model_hash,
    read_document,
    write_csv,
    write_json,
)
from .models import ModelError, model_from_document
from .scale import DEFAULT_TOL, identity_residuals, wq_eval
from .spectral import (
    InconclusiveError,
    SpectralError,
    SpectralProblem,
    TheoremViolation,
    classify_boundary,
    decay_parameter,
    spectrum_in_rect,
)

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_INCONCLUSIVE, EXIT_THEOREM, EXIT_PARTIAL = range(6)


class Run:
    """Shared state of one invocation: document, model, metadata inputs."""

    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.doc = read_document(args.model)
        self.model = model_from_document(self.doc)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        env = os.environ.get(SEED_ENV)
        if env is not None:
            self.seed, self.seed_source = int(env), f"env:{SEED_ENV}"
        else:
            self.seed, self.seed_source = args.seed, "flag"
        tols = dict(self.doc.get("tolerances", {}))
        if args.tol is not None:
            tols["tol"] = args.tol
        self.tols = tols

    def problem(self) -> SpectralProblem:
        return SpectralProblem(self.model, lambda_max=self.tols.get("lambda_max", 50.0),
                               B=self.tols.get("B", 20.0))

    def meta(self, generator=None, seeded=False) -> RunMetadata:
        wall = round(time.perf_counter() - self.t0, 3) if self.args.timing else None
        return RunMetadata(
            model_hash=model_hash(self.doc),
            seed=self.seed if seeded else None,
            seed_source=self.seed_source if seeded else "none",
            workers=self.args.workers,
            generator=generator,
            wall_time=wall,
            tolerances=self.tols,
        )


def _emit(msg: str):
    print(msg, file=sys.stderr)


def cmd_classify(run: Run) -> int:
    m = run.model
    if m.case is not BoundaryCase.ENTRANCE_INFINITY:
        _emit("classify needs an entrance_infinity (truncated) model")
        return EXIT_INPUT
    c = classify_boundary(m, tol=run.tols.get("classify_tol", 1e-2))
    write_json(run.out / "classify.json", c.as_dict(), run.meta())
    print(f"entrance={c.entrance} verdict={c.verdict}")
    return EXIT_INCONCLUSIVE if c.entrance is None else EXIT_OK


def cmd_scale(run: Run) -> int:
    m = run.model
    rows = []
    for qs in run.args.q:
        re_, _, im_ = qs.partition(",")
        q = complex(float(re_), float(im_ or 0.0))
        ev = wq_eval(m, q, tol=run.tols.get("tol", DEFAULT_TOL))
        for i in range(m.M + 1):
            W, Z = complex(ev.Wq[0, i]), complex(ev.Zq_end[i])
            rows.append((q.real, q.imag, m.x[i], W.real, W.imag, Z.real, Z.imag))
    write_csv(run.out / "scale.csv", ["q_re", "q_im", "x", "W0x_re", "W0x_im", "Zx_end_re", "Zx_end_im"],
              rows, run.meta())
    return EXIT_OK


def _parse_rect(s):
    if s is None:
        return None
    v = [float(t) for t in s.split(",")]
    if len(v) != 4:
        raise ValueError("--rect needs re0,re1,im0,im1")
    return tuple(v)


def cmd_spectrum(run: Run) -> int:
    P = run.problem()
    rect = _parse_rect(run.args.rect)
    rep = spectrum_in_rect(P, rect)
    cells = [c.rect for c in rep.certificates]

    def cell_of(z):
        for k, (x0, x1, y0, y1) in enumerate(cells):
            if x0 <= z.real <= x1 and y0 <= z.imag <= y1:
                return k
        return -1

    rows = [(z.real, z.imag, r, cell_of(z)) for z, r in zip(rep.zeros, rep.residuals)]
    meta = run.meta()
    write_csv(run.out / "spectrum.csv", ["re", "im", "residual", "winding_cell"], rows, meta)
    x0, x1, y0, y1 = rep.box
    plot = SvgPlot((x0 - 1, x1 + 1), (y0 - 1, y1 + 1), "zeros of D", "Re q", "Im q")
    plot.rect(x0, x1, y0, y1)
    plot.points([z.real for z in rep.zeros], [z.imag for z in rep.zeros])
    plot.write(run.out / "spectrum.svg", meta)
    summary = {
        "box": rep.box,
        "count": rep.count,
        "zeros": [{"re": z.real, "im": z.imag, "residual": r} for z, r in zip(rep.zeros, rep.residuals)],
        "certificates": [{"rect": c.rect, "winding": c.winding, "raw": c.raw, "status": c.status}
                         for c in rep.certificates],
        "caveat": rep.caveat,
    }
    code = EXIT_OK
    if any(c.status != "ok" for c in rep.certificates):
        code = EXIT_INCONCLUSIVE
    if rep.zeros and any(abs(z.imag) < 1e-9 for z in rep.zeros):
        try:
            lam0 = decay_parameter(P).lambda0
        except SpectralError:
            lam0 = None
        if lam0 is not None:
            summary["lambda0"] = lam0
            tol = 1e-6 * max(1.0, lam0)
            rivals = [z for z in rep.zeros if abs(z + lam0) > tol and z.real >= -lam0 - tol]
            if rivals:
                summary["violation"] = "zero with Re q >= -lambda0 besides -lambda0"
                code = EXIT_THEOREM
    write_json(run.out / "spectrum.json", summary, meta)
    print(f"{len(rep.zeros)} zeros in box")
    return code


def cmd_qsd(run: Run) -> int:
    from .qsd import qprocess_quantities, qsd_density

    P = run.problem()
    b = qsd_density(P)
    mu = qprocess_quantities(b)["mu"]
    dens = b.density()
    rows = [(b.x[i], b.nu[i], b.zinv[i], mu[i], dens[i]) for i in range(b.x.size)]
    meta = run.meta()
    write_csv(run.out / "qsd.csv", ["x", "nu_weight", "zinv", "mu_weight", "nu_density"], rows, meta)
    write_json(run.out / "qsd.json", {
        "lambda0": b.lambda0, "rho": b.rho, "norm_const": b.norm_const,
        "presum": b.presum, "case": b.case.value,
    }, meta)
    print(f"lambda0={b.lambda0:.12g} rho={b.rho:.12g}")
    return EXIT_OK


def cmd_yaglom(run: Run) -> int:
    from .qsd import qsd_density
    from .spectral import spectral_gap
    from .verify import simulate, yaglom_report

    a = run.args
    P = run.problem()
    b = qsd_density(P)
    x0 = a.x0 if a.x0 is not None else int(np.argmax(b.nu))
    ens = simulate(run.model, x0, a.horizon, a.paths, run.seed, dt_bucket=a.bucket,
                   workers=a.workers, init=b.nu if a.from_nu else None, step=a.step)
    rep = yaglom_report(ens, b.nu)
    try:
        gap = spectral_gap(P).gap
    except SpectralError:
        gap = None
    meta = run.meta(ens.generator, seeded=True)
    rows = [(t, n, n / ens.paths, tv, fl, se) for t, n, tv, fl, se in
            zip(ens.times, ens.survival, rep.tv, rep.floor, rep.se)]
    write_csv(run.out / "yaglom.csv", ["t", "survivors", "survival", "tv", "noise_floor", "se"], rows, meta)
    ratio = rep.fitted_rate / gap if (rep.fitted_rate is not None and gap) else None
    write_json(run.out / "yaglom.json", {
        "x0": ens.x0, "paths": ens.paths, "horizon": ens.horizon,
        "fitted_rate": rep.fitted_rate, "rate_ci": rep.rate_ci, "fit_range": rep.fit_range,
        "gap": gap, "rate_over_gap": ratio, "dropped_buckets": list(rep.dropped),
        "warnings": list(ens.warnings),
    }, meta)
    ok = np.isfinite(rep.tv) & (rep.tv > 0)
    ts, tv = ens.times[ok], rep.tv[ok]
    if tv.size:
        ly = np.log10(tv)
        plot = SvgPlot((0.0, ens.horizon), (float(ly.min()) - 0.2, 0.0), "TV to QSD", "t", "log10 TV")
        plot.line(ts, ly, "#1f5fa8")
        plot.line(ts, np.log10(rep.floor[ok]), "#999999", dash=True)
        if rep.fitted_rate is not None and gap is not None:
            plot.line([0, ens.horizon], [ly[0], ly[0] - gap * ens.horizon / np.log(10)], "#b03020", dash=True)
    else:
        plot = SvgPlot((0.0, ens.horizon), (-1.0, 0.0), "TV to QSD", "t", "log10 TV")
    plot.write(run.out / "yaglom.svg", meta)
    print(f"fitted_rate={rep.fitted_rate} gap={gap}")
    return EXIT_PARTIAL if rep.dropped else EXIT_OK


def _suite_identities(run):
    rng = np.random.default_rng(run.seed)
    out = []
    for _ in range(5):
        q = complex(*rng.uniform(-10, 10, 2))
        r = complex(*rng.uniform(-10, 10, 2))
        res = identity_residuals(run.model, q, r)
        bad = [k for k, v in res.items() if v is not None and v > 1e-9]
        out.append({"id": "identities", "q": q, "r": r, "residuals": res, "pass": not bad})
    oracle = run.model.extras.get("oracle")
    if oracle is not None:
        x = run.model.x
        for q in (1.0, 5.0, -1.0, 2 + 3j):
            ev = wq_eval(run.model, q)
            ref = oracle.W(q, x[:, None], x[None, :])
            iu = np.triu_indices(x.size, 1)
            rel = float(np.max(np.abs(ev.Wq[iu] - ref[iu]) / np.abs(ref[iu])))
            out.append({"id": "closed-form", "q": q, "max_rel": rel, "pass": rel <= 5e-4 * (512 / run.model.M) ** 2})
    return out


def _suite_oracle(run):
    from .qsd import qsd_density
    from .verify import eig_decay_oracle, subgenerator_for

    P = run.problem()
    b = qsd_density(P)
    sub = subgenerator_for(run.model)
    o = eig_decay_oracle(sub)
    chain = run.model.extras.get("family") == "chain"
    tol = 1e-8 if chain else 10 * run.model.grid.spacing() ** 2 * max(1.0, b.lambda0)
    err = abs(b.lambda0 - o["lambda0"])
    res = [{"id": "decay-vs-eig", "analytic": b.lambda0, "oracle": o["lambda0"], "error": err, "pass": err <= tol}]
    if chain:
        st = sub.states
        e_nu = float(np.max(np.abs(b.nu[st] - o["left_vec"])))
        z = b.zinv[st] / b.zinv[st][-1]
        e_z = float(np.max(np.abs(z - o["right_vec"])))
        res.append({"id": "qsd-vs-left-perron", "error": e_nu, "pass": e_nu <= 1e-8})
        res.append({"id": "zinv-vs-right-perron", "error": e_z, "pass": e_z <= 1e-8})
    return res


def _suite_semigroup(run):
    from .qsd import qsd_density
    from .verify import Mode, semigroup_checks, subgenerator_for

    if run.model.extras.get("family") != "chain":
        return [{"id": "semigroup", "skipped": "chain models only", "pass": True}]
    b = qsd_density(run.problem())
    sub = subgenerator_for(run.model)
    inv = semigroup_checks(b, sub, Mode.INVARIANCE)
    return [{"id": "invariance", "max": inv["max"], "pass": inv["max"] <= 1e-6}]


SUITES = {"identities": _suite_identities, "oracle": _suite_oracle, "semigroup": _suite_semigroup}


def cmd_verify(run: Run) -> int:
    names = list(SUITES) if run.args.suite == "all" else [run.args.suite]
    results = []
    for n in names:
        results.extend(SUITES[n](run))
    passed = all(r["pass"] for r in results)
    write_json(run.out / "verify.json", {"suites": names, "results": results, "pass": passed},
               run.meta(seeded=True))
    for r in results:
        print(f"{'PASS' if r['pass'] else 'FAIL'} {r['id']}")
    return EXIT_OK if passed else EXIT_VERIFY


COMMANDS = {
    "classify": cmd_classify,
    "scale": cmd_scale,
    "spectrum": cmd_spectrum,
    "qsd": cmd_qsd,
    "yaglom": cmd_yaglom,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model document (JSON, schema v1)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--seed", type=int, default=0, help=f"master seed (env {SEED_ENV} overrides)")
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--timing", action="store_true", help="record wall time (outputs then differ run to run)")

    p = argparse.ArgumentParser(prog="yaglom", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)
    sub.add_parser("classify", parents=[common])
    s = sub.add_parser("scale", parents=[common])
    s.add_argument("--q", action="append", default=None, help="re[,im]; repeatable")
    s = sub.add_parser("spectrum", parents=[common])
    s.add_argument("--rect", default=None, help="re0,re1,im0,im1")
    sub.add_parser("qsd", parents=[common])
    s = sub.add_parser("yaglom", parents=[common])
    s.add_argument("--paths", type=int, default=100_000)
    s.add_argument("--horizon", type=float, default=15.0)
    s.add_argument("--bucket", type=float, default=0.05)
    s.add_argument("--step", type=float, default=None, help="Euler step (diffusions)")
    s.add_argument("--x0", type=int, default=None, help="start grid index (default: QSD mode)")
    s.add_argument("--from-nu", action="store_true", help="start from the QSD itself")
    s = sub.add_parser("verify", parents=[common])
    s.add_argument("--suite", choices=["identities", "oracle", "semigroup", "all"], default="all")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "scale" and not args.q:
        args.q = ["1"]
    try:
        run = Run(args)
    except (DocumentError, ModelError, StructuralError, ValueError) as e:
        _emit(f"invalid input: {e}")
        return EXIT_INPUT
    try:
        return COMMANDS[args.cmd](run)
    except TheoremViolation as e:
        _emit(f"theorem violation: {e}")
        return EXIT_THEOREM
    except InconclusiveError as e:
        _emit(str(e))
        return EXIT_INCONCLUSIVE
    except (SpectralError, ArithmeticError) as e:
        _emit(f"failed: {e}")
        return EXIT_VERIFY
    except ValueError as e:
        _emit(f"invalid input: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
