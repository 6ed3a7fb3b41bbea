"""Command-line front end: verify, deflate, decompose, simulate.

Exit codes are a stable contract: 0 on success, 1 on a mathematical failure
(an invariant or admissibility inequality is named), 2 on input errors.
Outputs are canonical JSON and CSV, byte-identical across runs for identical
inputs and seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import deflators as dfl
from . import enlargement as enl
from . import jumpdiff as jd
from . import modelio
from .errors import (
    AdmissibilityError,
    ContractViolationError,
    HorizonDeflatorError,
    SpaceValidationError,
    UnsupportedDimensionError,
)
from .market import MarketModel, verify_deflator, verify_lmd
from .prob_core import classify, stochastic_exponential, stochastic_integral, stop

OUT_ENV = "HORIZON_DEFLATORS_OUT"


def _outdir(args) -> str:
    out = args.out or os.environ.get(OUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _survival_invariants(rts, tol):
    """Named residuals for every structural invariant of the survival layer."""
    space = rts.space
    inv = {}
    inv["m_martingale"] = classify(space, rts.m, tol=tol).max_residual
    inv["ng_martingale"] = classify(space, rts.N_G, filtration=rts.G_filtration,
                                    tol=tol).max_residual
    inv["zbar_martingale"] = classify(space, rts.Z_bar, tol=tol).max_residual
    dm = np.diff(rts.m, axis=1)
    inv["increment_identity"] = float(np.max(np.abs(
        dm - (rts.G_tilde[:, 1:] - rts.G_minus[:, 1:]))))
    acc = rts.G.copy()
    for n in range(space.horizon + 1):
        for k in range(n + 1):
            hit = (rts.tau == k).astype(float)
            pk, _ = enl.cond_expect(hit, space.filtration.block_ids[n], space.measure)
            acc[:, n] += pk
    inv["survival_mass_balance"] = float(np.max(np.abs(acc - 1.0)))
    inv["terminal_survival_zero"] = float(np.max(np.abs(rts.G[:, -1])))
    inv["gtilde_dominates"] = float(max(0.0, np.max(rts.G - rts.G_tilde)))
    inv["ng_stopped"] = float(np.max(np.abs(stop(rts.N_G, rts.tau) - rts.N_G)))
    zbar_alt = stochastic_exponential(
        stochastic_integral(enl.survival_exponential_integrand(rts), rts.m))
    inv["zbar_exponential_identity"] = float(np.max(np.abs(zbar_alt - rts.Z_bar)))
    inv["transport_m_martingale"] = classify(
        space, enl.transport(rts.m, rts, check=False),
        filtration=rts.G_filtration, tol=tol).max_residual
    inv["compensated_transport_martingale"] = classify(
        space, enl.transport_compensated(rts.m, rts, check=False),
        filtration=rts.G_filtration, tol=tol).max_residual
    inv["compensated_default_martingale"] = classify(
        space, enl.compensated_default_indicator(rts),
        filtration=rts.G_filtration, tol=tol).max_residual
    return inv


def cmd_verify(args) -> int:
    try:
        doc = modelio.load_model(args.model)
        rts = enl.build_survival(doc.space, doc.tau, verify=False)
        invariants = _survival_invariants(rts, args.tol)
    except (SpaceValidationError, ContractViolationError) as exc:
        return _fail(2, f"input error: {exc}")
    out = _outdir(args)
    failing = {k: v for k, v in invariants.items() if v > args.tol}
    report = {
        "model": os.path.basename(str(args.model)),
        "tolerance": args.tol,
        "invariants": invariants,
        "failing": sorted(failing),
        "ok": not failing,
    }
    modelio.write_json(os.path.join(out, "verify-report.json"), report)
    for name, proc in (("G", rts.G), ("G_tilde", rts.G_tilde), ("m", rts.m),
                       ("N_G", rts.N_G), ("Z_bar", rts.Z_bar)):
        modelio.process_to_csv(os.path.join(out, f"survival_{name}.csv"),
                               doc.space.outcomes, proc)
    if failing:
        worst = max(failing, key=failing.get)
        return _fail(1, f"invariant {worst} fails with residual {failing[worst]:g}")
    print(f"verify: all {len(invariants)} invariants hold at tolerance {args.tol:g}")
    return 0


def _build_from_params(params, rts):
    if params.route == "additive":
        return dfl.build_additive(params.K_F, params.V_F, params.phi_o,
                                  params.phi_pr, rts)
    if params.route == "multiplicative":
        return dfl.build_multiplicative(params.Z_F, params.phi_o, params.phi_pr, rts)
    return dfl.build_measure_change(params.Z_QF, params.phi, rts)


def cmd_deflate(args) -> int:
    try:
        doc = modelio.load_model(args.model)
        params = modelio.load_params(args.params, doc.space.n_atoms, doc.space.horizon)
        if args.route:
            params = dfl.DeflatorParams(
                route=args.route, K_F=params.K_F, Z_F=params.Z_F, Z_QF=params.Z_QF,
                phi_o=params.phi_o, phi_pr=params.phi_pr, phi=params.phi,
                V_F=params.V_F)
        rts = enl.build_survival(doc.space, doc.tau)
    except (SpaceValidationError, ContractViolationError) as exc:
        return _fail(2, f"input error: {exc}")
    try:
        deflator = _build_from_params(params, rts)
    except AdmissibilityError as exc:
        return _fail(1, f"inadmissible parameters: {exc}")
    out = _outdir(args)
    modelio.process_to_csv(os.path.join(out, "Z.csv"), doc.space.outcomes, deflator.Z)
    for name, f in deflator.factors.items():
        modelio.process_to_csv(os.path.join(out, f"factor_{name}.csv"),
                               doc.space.outcomes, f)
    certificate = {
        "route": params.route,
        "provenance": deflator.provenance,
        "admissible": deflator.report.ok,
        "min_factor": deflator.report.min_factor,
        "factor_product_residual": float(np.max(np.abs(
            deflator.factor_product() - deflator.Z))),
        "classify": classify(rts.space, deflator.Z,
                             filtration=rts.G_filtration).verdict,
    }
    if doc.S is not None:
        market = MarketModel.from_prices(doc.space, doc.S, assets=doc.assets)
        stopped = market.stopped(rts.tau, rts.G_filtration)
        lmd = verify_lmd(deflator.Z, stopped, tol=args.tol)
        certificate["verify_lmd"] = {"ok": lmd.ok, "residual": lmd.max_residual}
        try:
            gen = verify_deflator(deflator.Z, stopped, tol=args.tol)
            certificate["verify_deflator"] = {"ok": gen.ok, "excess": gen.max_residual}
        except UnsupportedDimensionError as exc:
            certificate["verify_deflator"] = {"ok": None, "note": str(exc)}
    modelio.write_json(os.path.join(out, "certificate.json"), certificate)
    print(f"deflate: route {params.route}, admissible, certificate written")
    return 0


def cmd_decompose(args) -> int:
    try:
        doc = modelio.load_model(args.model)
        rts = enl.build_survival(doc.space, doc.tau)
        table = modelio.process_from_csv(args.input, doc.space.outcomes,
                                         doc.space.horizon)
        if not rts.G_filtration.is_adapted(table, tol=1e-9):
            raise SpaceValidationError("table is not adapted to the enlarged filtration")
    except (SpaceValidationError, ContractViolationError) as exc:
        return _fail(2, f"input error: {exc}")
    try:
        repn = dfl.decompose_martingale(table, rts, tol=args.tol)
    except ContractViolationError as exc:
        return _fail(1, f"decomposition rejected: {exc}")
    out = _outdir(args)
    modelio.process_to_csv(os.path.join(out, "M_F.csv"), doc.space.outcomes, repn.M_F)
    modelio.process_to_csv(os.path.join(out, "phi.csv"), doc.space.outcomes, repn.phi)
    report = {"reassembly_residual": repn.residual, "tolerance": args.tol,
              "ok": repn.residual <= args.tol}
    modelio.write_json(os.path.join(out, "decompose-report.json"), report)
    if repn.residual > args.tol:
        return _fail(1, f"reassembly residual {repn.residual:g} exceeds {args.tol:g}")
    print(f"decompose: reassembly residual {repn.residual:g}")
    return 0


def cmd_simulate(args) -> int:
    try:
        sc, extras = modelio.load_scenario(args.scenario)
        if args.paths:
            sc = jd.JumpDiffusionScenario(
                sigma=sc.sigma, zeta=sc.zeta, mu=sc.mu, lam=sc.lam, a=sc.a, S0=sc.S0,
                horizon=sc.horizon, dt=args.dt or sc.dt, n_paths=args.paths,
                seed=args.seed if args.seed is not None else sc.seed)
        elif args.dt or args.seed is not None:
            sc = jd.JumpDiffusionScenario(
                sigma=sc.sigma, zeta=sc.zeta, mu=sc.mu, lam=sc.lam, a=sc.a, S0=sc.S0,
                horizon=sc.horizon, dt=args.dt or sc.dt, n_paths=sc.n_paths,
                seed=args.seed if args.seed is not None else sc.seed)
    except SpaceValidationError as exc:
        return _fail(2, f"input error: {exc}")
    bundle = jd.simulate(sc, keep_paths=extras["keep_paths"])
    feats = jd.feature_matrix(bundle)
    psi2 = extras["psi2"]
    try:
        psi1 = jd.solve_drift(sc, psi2)
        plain = jd.build_deflator(bundle, psi1, psi2)
        fancy = jd.build_deflator(bundle, psi1, psi2, phi_o=extras["phi_o"],
                                  phi_pr=extras["phi_pr"])
    except AdmissibilityError as exc:
        return _fail(2, f"scenario constraint violation: {exc}")
    wealth = jd.proportional_wealth(bundle, extras["theta"])
    suite = {
        "m": (bundle.m, 1.0, "martingale", feats),
        "transported_brownian": (jd.transported_brownian(bundle), 0.0, "martingale", feats),
        "transported_poisson": (jd.transported_poisson(bundle), 0.0, "martingale", feats),
        "N_G": (bundle.N_G, 0.0, "martingale", feats),
        "survival_exponential": (jd.survival_exponential(bundle), 1.0, "martingale", feats),
        "deflator_plain": (plain["Z"], 1.0, "martingale", None),
        "deflator_with_default_leg": (fancy["Z"], 1.0, "martingale", None),
        "deflated_wealth": (plain["Z"] * wealth, 1.0, "supermartingale", None),
        "deflated_price_drift": (jd.lmd_times_price(bundle, psi1, psi2), 1.0,
                                 "martingale", feats),
    }
    results, rejected, warnings = {}, [], []
    for name, (vals, x0, null, ft) in suite.items():
        rep = jd.mc_test(vals, bundle.report_times, start=x0, null=null, features=ft)
        results[name] = {
            "null": null,
            "means": rep.means.tolist(),
            "ses": rep.ses.tolist(),
            "zscores": rep.zscores.tolist(),
            "max_abs_z": rep.max_abs_z,
            "rejected": rep.rejected,
        }
        if rep.rejected:
            rejected.append(name)
        if rep.warning:
            warnings.append(f"{name}: {rep.warning}")
    out = _outdir(args)
    summary = {
        "scenario": {"sigma": sc.sigma, "zeta": sc.zeta, "mu": sc.mu, "lambda": sc.lam,
                     "a": sc.a, "beta": sc.beta, "S0": sc.S0, "horizon": sc.horizon,
                     "dt": sc.dt, "n_paths": sc.n_paths, "seed": sc.seed,
                     "psi1": psi1, "psi2": psi2},
        "report_times": bundle.report_times.tolist(),
        "results": results,
        "m_identity_residual": jd.closed_forms(bundle)["m_identity_residual"],
        "rejected": sorted(rejected),
        "warnings": warnings,
        "ok": not rejected,
    }
    modelio.write_json(os.path.join(out, "simulate-summary.json"), summary)
    if bundle.samples:
        path = os.path.join(out, "paths.csv")
        cols = ("W", "N", "S", "G", "m", "N_G")
        with open(path, "w") as fh:
            fh.write("path,time," + ",".join(cols) + ",Z\n")
            for s in bundle.samples:
                Z = jd.deflator_grid(bundle, s["index"], psi1, psi2,
                                     phi_o=extras["phi_o"], phi_pr=extras["phi_pr"])
                for j, t in enumerate(s["time"]):
                    row = ",".join(modelio.fmt(s[c][j]) for c in cols)
                    fh.write(f"{s['index']},{modelio.fmt(t)},{row},{modelio.fmt(Z[j])}\n")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if rejected:
        return _fail(1, f"null rejected for: {', '.join(sorted(rejected))}")
    print(f"simulate: all {len(suite)} statistical nulls pass at 3 standard errors")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="horizon-deflators",
        description="Construct and verify deflators for markets stopped at a random horizon.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check all survival-structure invariants of a model")
    v.add_argument("--model", required=True)
    v.add_argument("--out", default=None)
    v.add_argument("--tol", type=float, default=1e-10)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("deflate", help="build a deflator from a parameter document")
    d.add_argument("--model", required=True)
    d.add_argument("--params", required=True)
    d.add_argument("--route", choices=list(dfl.ROUTES), default=None)
    d.add_argument("--out", default=None)
    d.add_argument("--tol", type=float, default=1e-9)
    d.set_defaults(func=cmd_deflate)

    c = sub.add_parser("decompose", help="decompose an enlarged-filtration martingale")
    c.add_argument("--model", required=True)
    c.add_argument("--input", required=True, help="CSV process table (atom,time,value)")
    c.add_argument("--out", default=None)
    c.add_argument("--tol", type=float, default=1e-9)
    c.set_defaults(func=cmd_decompose)

    s = sub.add_parser("simulate", help="run the jump-diffusion statistical suite")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--paths", type=int, default=None)
    s.add_argument("--dt", type=float, default=None)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HorizonDeflatorError as exc:
        return _fail(2, f"error: {exc}")


if __name__ == "__main__":
    sys.exit(main())
