"""Command line entry point: simulate, estimate, test, mc."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .estimate import adaptive_estimate, lga_estimate
from .model import (BENCH_OU_ALPHA, BENCH_OU_BETA, BENCH_OU_X0, OUSpec, ParameterBox,
                    default_ou_boxes, ou_model, unvech)
from .noisetest import critical_value, noise_test
from .optimize import OptimizerOptions
from .sampling import derive_scheme
from .simulate import NOISE_DISTRIBUTIONS, NoiseSpec, PathConfig, add_noise, simulate_latent

log = logging.getLogger("noisydiff")


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip()], dtype=float)


def _box(text: str) -> ParameterBox:
    vals = _floats(text)
    if vals.size % 2:
        raise argparse.ArgumentTypeError("box needs lo,hi pairs")
    return ParameterBox.from_pairs(vals)


def _lambda_matrix(args, d: int) -> np.ndarray:
    if args.lambda_vech is not None:
        return unvech(_floats(args.lambda_vech))
    return args.lambda_scale * np.eye(d)


def cmd_simulate(args) -> int:
    alpha = _floats(args.alpha) if args.alpha else BENCH_OU_ALPHA
    beta = _floats(args.beta) if args.beta else BENCH_OU_BETA
    x0 = _floats(args.x0) if args.x0 else BENCH_OU_X0
    spec = OUSpec.from_params(alpha, beta, x0)
    model = ou_model(spec=spec)
    h = harness.parse_step(args.h, args.n)
    ss = np.random.SeedSequence(args.seed)
    s_wiener, s_noise = ss.spawn(2)
    cfg = PathConfig(args.n, h, substeps=args.substeps, exact_ou=not args.euler)
    X = simulate_latent(model, beta, alpha, cfg, x0=x0, rng=np.random.default_rng(s_wiener))
    noise = NoiseSpec(_lambda_matrix(args, spec.dim), args.noise_dist)
    Y = add_noise(X, noise, seed=np.random.default_rng(s_noise))
    if args.output in (None, "-"):
        harness.write_observations(sys.stdout, Y, h)
    else:
        harness.write_observations(args.output, Y, h)
    return 0


def _load(args):
    Y, h = harness.read_observations(args.input, args.h)
    if h is None:
        raise ValueError("the input has no t column; pass --h")
    return Y, h


def cmd_estimate(args) -> int:
    Y, h = _load(args)
    d = Y.shape[1]
    if args.model != "ou":
        raise ValueError(f"unsupported model {args.model!r}")
    model = ou_model(d)
    ba, bb = default_ou_boxes(d)
    ba = args.box_alpha or ba
    bb = args.box_beta or bb
    opts = OptimizerOptions(n_starts=args.n_starts, seed=args.seed)
    n = Y.shape[0] - 1
    if args.method == "lmm":
        scheme = derive_scheme(n, h, args.tau, args.p_override)
        m4 = _floats(args.fourth_moment) if args.fourth_moment else None
        res = adaptive_estimate(Y, scheme, model, ba, bb, opts, stderr=args.stderr, noise_fourth_moment=m4)
        extra = {"p": scheme.p, "k": scheme.k, "delta": scheme.delta, "dropped": scheme.dropped}
    else:
        res = lga_estimate(Y, h, model, ba, bb, opts)
        extra = {}
    out = res.as_dict()
    out.update({"n": n, "h": h, "tau": args.tau, **extra})
    if args.format == "json":
        print(json.dumps(out, indent=2))
    else:
        print("quantity,index,value,stderr")
        se = res.stderr or {}
        groups = [("theta_eps", res.theta_eps_hat), ("alpha", res.alpha_hat), ("beta", res.beta_hat)]
        for name, vals in groups:
            if vals is None:
                continue
            for i, v in enumerate(vals):
                s = se.get(name)
                print(f"{name},{i + 1},{float(v)!r},{'' if s is None else repr(float(s[i]))}")
        for st in res.stages:
            print(f"stage_{st.name},converged,{st.converged},")
    if not res.converged:
        log.warning("optimizer did not converge in every stage; see the stage diagnostics")
    return 0


def cmd_test(args) -> int:
    Y, h = _load(args)
    scheme = derive_scheme(Y.shape[0] - 1, h, args.tau, args.p_override)
    res = noise_test(Y, scheme)
    reject = res.reject_at(args.level)
    if args.json:
        print(json.dumps({**res.as_dict(), "level": args.level, "critical_value": critical_value(args.level),
                          "reject": reject, "p": scheme.p, "k": scheme.k}, indent=2))
    else:
        p = "< 1e-300" if res.p_value < 1e-300 else f"{res.p_value:.6g}"
        print(f"Z_n = {res.z:.6f}")
        print(f"p-value = {p}")
        verdict = "reject H0 (noise present)" if reject else "do not reject H0 (no noise)"
        print(f"level {args.level}: {verdict}")
    return 0


def cmd_mc(args) -> int:
    cfg = harness.load_config(args.config)
    if args.full_scale:
        cfg = harness.full_scale(cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["replications"] = args.replications
    if overrides:
        cfg = replace(cfg, **overrides)
    report = harness.run_experiment(cfg, threads=args.threads)
    output = args.output or cfg.output or "mc_report.csv"
    paths = harness.write_report(report, output, args.format)
    log.info("wrote %s", ", ".join(map(str, paths)))
    for r in report.rejection:
        print(f"{r['scenario']}: P(Z_n >= z_{r['level']:g}) = {r['rate']:.3f}")
    if report.total_failures > 0.05 * cfg.replications:
        log.error("%d failed replications exceed 5%%", report.total_failures)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noisydiff", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate noisy OU observations to CSV")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--h", default="n^-0.7", help='step size or "n^-gamma"')
    sp.add_argument("--alpha", help="vech(A), comma separated")
    sp.add_argument("--beta", help="vec(B) column-major then shift, comma separated")
    sp.add_argument("--x0")
    sp.add_argument("--lambda-scale", type=float, default=0.0, help="Lambda = scale * I")
    sp.add_argument("--lambda-vech", help="vech(Lambda), comma separated")
    sp.add_argument("--noise-dist", choices=NOISE_DISTRIBUTIONS, default="gaussian")
    sp.add_argument("--euler", action="store_true", help="Euler-Maruyama instead of exact transitions")
    sp.add_argument("--substeps", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", "-o")
    sp.set_defaults(func=cmd_simulate)

    def data_args(p):
        p.add_argument("--input", "-i", required=True)
        p.add_argument("--h", type=float, help="step size (inferred from a t column if present)")
        p.add_argument("--tau", type=float, default=2.0)
        p.add_argument("--p-override", type=int)

    ep = sub.add_parser("estimate", help="fit the OU model to observations")
    data_args(ep)
    ep.add_argument("--model", default="ou")
    ep.add_argument("--box-alpha", type=_box, help="lo,hi,lo,hi,...")
    ep.add_argument("--box-beta", type=_box, help="lo,hi,lo,hi,...")
    ep.add_argument("--method", choices=("lmm", "lga"), default="lmm")
    ep.add_argument("--stderr", action="store_true")
    ep.add_argument("--fourth-moment", help="per-component E[eps^4] (default 3, Gaussian)")
    ep.add_argument("--n-starts", type=int, default=5)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--format", choices=("json", "csv"), default="json")
    ep.set_defaults(func=cmd_estimate)

    tp = sub.add_parser("test", help="test for observation noise")
    data_args(tp)
    tp.add_argument("--level", type=float, default=0.05)
    tp.add_argument("--json", action="store_true")
    tp.set_defaults(func=cmd_test)

    mp = sub.add_parser("mc", help="run a Monte Carlo study from a TOML config")
    mp.add_argument("config")
    mp.add_argument("--threads", type=int, default=1)
    mp.add_argument("--seed", type=int)
    mp.add_argument("--replications", type=int)
    mp.add_argument("--full-scale", action="store_true", help="n = 10^6 and 1000 replications")
    mp.add_argument("--output", "-o")
    mp.add_argument("--format", choices=("csv", "json"), default="csv")
    mp.set_defaults(func=cmd_mc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        log.error("%s", exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
