"""``traj-thermo`` command-line tool.

Every command reads a run configuration (the packaged default reproduces the
uniform, staggered, random-field and nearest-neighbour ideal curves) and
writes plot-ready CSV/JSON files. Output files start with a comment line
carrying the config hash and seed, and file names follow
``{command}_{bias name}[_{kind}]_s{value}.{ext}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from . import bias as bias_mod
from .collision import TrajectoryDistribution, enumerate_ensemble, model_kraus
from .config import ConfigError, RunConfig, default_config, load_config
from .dilation import FRESH, REUSE, NotCompletable, build_circuit, check_unitaries, dilate, export_ir, extract_blocks
from .doob import (
    NoPhysicalConstruction,
    SingularG,
    biased_dynamics,
    biased_dynamics_field,
    biased_dynamics_nn,
    biased_ensemble,
    completeness_residuals,
    g_sequence_field,
    g_sequence_nn,
)
from .linalg import LinalgError
from .simulate import chi2_gof, circuit_distribution, run_circuit, sample_kraus, thread_count, tv_distance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

CENTRAL_TOL = 1e-9
TRACE_TOL = 1e-9
Z_TOL = 1e-9
BLOCK_TOL = 1e-10
UNITARY_TOL = 1e-10
COHERENT_MAX_N = 8


def s_tag(s: float) -> str:
    """Filesystem-safe rendering of ``s``: ``-2 -> m2``, ``0.5 -> 0p5``."""
    return ("%g" % (s + 0.0)).replace("-", "m").replace(".", "p")


def fmt(x: float) -> str:
    """``%.12g`` that always reads back as a float (``1 -> 1.0``)."""
    text = "%.12g" % x
    return text if any(c in text for c in ".ein") else text + ".0"


class Context:
    """Shared, read-only state for one command invocation."""

    def __init__(self, config: RunConfig, out: str, command: str):
        self.config = config
        self.out = out
        self.command = command
        self.n = config.n
        self.kraus = model_kraus(config.model.params())
        self.psi0 = config.model.state()
        self.baseline = enumerate_ensemble(self.kraus, self.psi0, self.n)
        self.hash = config.hash()
        os.makedirs(out, exist_ok=True)

    def header(self, **extra) -> str:
        fields = {"config_hash": self.hash, "seed": self.config.sampling.seed, **extra}
        return "# " + " ".join(f"{k}={v}" for k, v in fields.items())

    def path(self, name: str, s: float, kind: str = "", ext: str = "csv") -> str:
        middle = f"_{kind}" if kind else ""
        return os.path.join(self.out, f"{self.command}_{name}{middle}_s{s_tag(s)}.{ext}")

    def write_csv(self, path: str, columns: tuple[str, str], rows, **meta) -> None:
        lines = [self.header(**meta), ",".join(columns)]
        lines += [f"{a},{b}" for a, b in rows]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_json(self, path: str, payload: dict) -> None:
        payload = {"config_hash": self.hash, **payload}
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def wants(self, fmt_name: str) -> bool:
        return fmt_name in self.config.outputs.formats


def _tasks(config: RunConfig):
    return [(b, s) for b in config.biases for s in b.s]


def _run_parallel(fn: Callable, tasks: list) -> list:
    workers = min(thread_count(), len(tasks)) or 1
    if workers == 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


def _dynamics(ctx: Context, b, s: float):
    spec = b.spec(ctx.n, s)
    if spec.variant == bias_mod.PAIRWISE:
        raise NoPhysicalConstruction(
            f"bias {b.name!r}: pairwise energies have no physical-dynamics construction; "
            "use the exact command"
        )
    return biased_dynamics(ctx.kraus, spec, ctx.n, ctx.psi0)


def _histogram_rows(hist: dict) -> list:
    return [(fmt(e), fmt(p)) for e, p in hist.items()]


def cmd_exact(config: RunConfig, out: str) -> list[str]:
    ctx = Context(config, out, "exact")

    def one(b, s):
        spec = b.spec(ctx.n, s)
        dist = bias_mod.reweight(ctx.baseline, spec)
        meta = {"variant": b.variant, "s": fmt(s)}
        written = []
        path = ctx.path(b.name, s)
        rows = ((k, fmt(v)) for k, v in dist.as_dict().items() if v > 0)
        ctx.write_csv(path, ("bitstring", "probability"), rows, **meta)
        written.append(path)
        path = ctx.path(b.name, s, "energy")
        ctx.write_csv(path, ("energy", "probability"), _histogram_rows(bias_mod.marginal_energy_histogram(dist, spec)), **meta)
        written.append(path)
        path = ctx.path(b.name, s, "marginal")
        rows = ((i + 1, fmt(p)) for i, p in enumerate(dist.step_marginals()))
        ctx.write_csv(path, ("step", "p_one"), rows, **meta)
        written.append(path)
        return written

    return [p for ps in _run_parallel(one, _tasks(config)) for p in ps]


def _counts_rows(dist: TrajectoryDistribution):
    return ((k, int(v)) for k, v in dist.as_dict().items())


def cmd_sample(config: RunConfig, out: str) -> list[str]:
    ctx = Context(config, out, "sample")
    shots, seed = config.sampling.shots, config.sampling.seed

    def one(b, s):
        spec = b.spec(ctx.n, s)
        dyn = _dynamics(ctx, b, s)
        run = sample_kraus(dyn, shots, seed)
        exact = bias_mod.reweight(ctx.baseline, spec)
        chi2, dof = chi2_gof(run, exact)
        meta = {"variant": b.variant, "s": fmt(s), "shots": shots}
        written = []
        if ctx.wants("csv"):
            path = ctx.path(b.name, s)
            ctx.write_csv(path, ("bitstring", "count"), _counts_rows(run.counts), **meta)
            written.append(path)
            path = ctx.path(b.name, s, "energy")
            hist = bias_mod.marginal_energy_histogram(run.counts, spec)
            ctx.write_csv(path, ("energy", "frequency"), _histogram_rows(hist), **meta)
            written.append(path)
        if ctx.wants("json"):
            sampled_hist = bias_mod.marginal_energy_histogram(run.counts, spec)
            exact_hist = bias_mod.marginal_energy_histogram(exact, spec)
            summary = {
                "bias": b.name,
                "variant": b.variant,
                "s": s,
                "seed": seed,
                "shots": shots,
                "tv_to_exact": tv_distance(run.counts, exact),
                "chi2": chi2,
                "dof": dof,
                "energy_histogram": [
                    {"energy": e, "sampled": sampled_hist.get(e, 0.0), "exact": p} for e, p in exact_hist.items()
                ],
            }
            path = ctx.path(b.name, s, ext="json")
            ctx.write_json(path, summary)
            written.append(path)
        return written

    return [p for ps in _run_parallel(one, _tasks(config)) for p in ps]


def cmd_circuit(config: RunConfig, out: str, execute: bool = False, ancilla_policy: str = FRESH) -> list[str]:
    ctx = Context(config, out, "circuit")
    shots, seed = config.sampling.shots, config.sampling.seed

    def one(b, s):
        dyn = _dynamics(ctx, b, s)
        circuit = build_circuit(dyn, ancilla_policy)
        path = ctx.path(b.name, s, ext="trajir")
        export_ir(circuit, path, (ctx.header(variant=b.variant, s=fmt(s), ancilla_policy=ancilla_policy)[2:],))
        written = [path]
        if execute:
            run = run_circuit(circuit, shots, seed)
            kraus_run = sample_kraus(dyn, shots, seed + 1)
            exact = bias_mod.reweight(ctx.baseline, b.spec(ctx.n, s))
            meta = {"variant": b.variant, "s": fmt(s), "shots": shots}
            path = ctx.path(b.name, s)
            ctx.write_csv(path, ("bitstring", "count"), _counts_rows(run.counts), **meta)
            written.append(path)
            path = ctx.path(b.name, s, ext="json")
            ctx.write_json(
                path,
                {
                    "bias": b.name,
                    "s": s,
                    "seed": seed,
                    "shots": shots,
                    "ancilla_policy": ancilla_policy,
                    "tv_to_exact": tv_distance(run.counts, exact),
                    "tv_to_kraus_sampler": tv_distance(run.counts, kraus_run.counts),
                },
            )
            written.append(path)
        return written

    return [p for ps in _run_parallel(one, _tasks(config)) for p in ps]


def verify_checks(config: RunConfig, g_hook: Callable | None = None) -> dict:
    """Run the end-to-end invariant checks and return a report.

    ``g_hook`` receives each freshly computed G sequence and may modify it
    in place before the dynamics is built (fault injection).
    """
    kraus = model_kraus(config.model.params())
    psi0 = config.model.state()
    n = config.n
    baseline = enumerate_ensemble(kraus, psi0, n)
    checks = []

    def record(name, b, s, value, tol):
        checks.append(
            {"check": name, "bias": b.name, "s": s, "value": float(value), "tol": tol, "passed": bool(value <= tol)}
        )

    for b, s in _tasks(config):
        spec = b.spec(n, s)
        if spec.variant == bias_mod.PAIRWISE:
            checks.append({"check": "physical_dynamics", "bias": b.name, "s": s, "passed": True, "skipped": True})
            continue
        if spec.variant == bias_mod.FIELD:
            gseq = g_sequence_field(kraus, s, spec.p, n)
            if g_hook:
                g_hook(gseq)
            dyn = biased_dynamics_field(kraus, s, spec.p, n, psi0, gseq)
        else:
            gseq = g_sequence_nn(kraus, s, n)
            if g_hook:
                g_hook(gseq)
            dyn = biased_dynamics_nn(kraus, s, n, psi0, gseq)
        exact = bias_mod.reweight(baseline, spec)
        biased = biased_ensemble(dyn)
        record("central_identity", b, s, np.max(np.abs(biased.weights - exact.weights)), CENTRAL_TOL)
        record("trace_preservation", b, s, max(r for *_, r in completeness_residuals(dyn)), TRACE_TOL)
        z = bias_mod.mgf(baseline, spec)
        record("z_identity", b, s, abs(np.exp(dyn.log_z) - z) / z, Z_TOL)
        try:
            circuit = build_circuit(dyn)
        except NotCompletable as exc:
            # non-isometric Kraus pairs cannot be dilated; report instead of aborting
            for name in ("gate_unitarity", "dilation_roundtrip"):
                checks.append({"check": name, "bias": b.name, "s": s, "passed": False, "error": str(exc)})
            continue
        record("gate_unitarity", b, s, check_unitaries(circuit), UNITARY_TOL)
        block_err = 0.0
        for _, _, pair in dyn.all_pairs():
            blocks = extract_blocks(dilate(pair))
            block_err = max(block_err, max(float(np.max(np.abs(blocks[k] - pair[k]))) for k in (0, 1)))
        record("dilation_roundtrip", b, s, block_err, BLOCK_TOL)
        if n <= COHERENT_MAX_N:
            classical = circuit_distribution(circuit)
            coherent = circuit_distribution(build_circuit(dyn, FRESH, coherent=True))
            record("coherent_vs_classical", b, s, np.max(np.abs(classical.weights - coherent.weights)), CENTRAL_TOL)
            record("circuit_vs_exact", b, s, np.max(np.abs(classical.weights - exact.weights)), CENTRAL_TOL)
    passed = all(c["passed"] for c in checks)
    return {"config_hash": config.hash(), "passed": passed, "checks": checks}


def cmd_verify(config: RunConfig, out: str, g_hook: Callable | None = None) -> tuple[bool, str]:
    os.makedirs(out, exist_ok=True)
    report = verify_checks(config, g_hook)
    path = os.path.join(out, "verify_report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report["passed"], path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traj-thermo", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("exact", "sample", "circuit", "verify"))
    parser.add_argument("--config", help="TOML run configuration (default: the packaged config)")
    parser.add_argument("--out", help="output directory (overrides outputs.directory)")
    parser.add_argument("--execute", action="store_true", help="circuit: also run the circuit and write counts")
    parser.add_argument("--ancilla-policy", choices=(FRESH, REUSE), default=FRESH)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else default_config()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or config.outputs.directory
    try:
        if args.command == "exact":
            written = cmd_exact(config, out)
        elif args.command == "sample":
            written = cmd_sample(config, out)
        elif args.command == "circuit":
            written = cmd_circuit(config, out, args.execute, args.ancilla_policy)
        else:
            ok, path = cmd_verify(config, out)
            print(path)
            if not ok:
                print("verification failed, see report", file=sys.stderr)
                return EXIT_VERIFY
            return EXIT_OK
    except NoPhysicalConstruction as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularG as exc:
        print(f"numeric failure: {exc}. Try a smaller |s|.", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, LinalgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
