"""Command-line front end: ``distdrift {build,simulate,verify,plot,all} --scenario FILE``.

Exit codes: 0 success (verify: all PASS), 1 missing inputs or plotting errors,
2 scenario/build errors, 3 simulation errors, 4 a verification FAIL,
5 verification INCONCLUSIVE without FAIL.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from .coeffs import build_sigma_table, check_non_explosion
from .errors import DistDriftError, ScenarioError
from .htransform import build_h
from .pathfunc import PathFunctional, validate_growth, validate_lipschitz
from .scenario import Scenario
from .sim import (PathEnsemble, preflight_novikov, read_binary, simulate_transformed,
                  simulate_weighted)
from . import plots
from . import verify as V

log = logging.getLogger("distdrift")

EXIT_OK, EXIT_INPUT, EXIT_BUILD, EXIT_SIM, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4, 5
SCHEME = {"transformed": "transformed-euler", "weighted": "girsanov-weighted"}


class MissingInput(DistDriftError):
    """A command's prerequisite artifacts are absent."""


def version_string() -> str:
    """git-describe style version, e.g. ``v0.1.0-0-g0e98ca3-dirty``."""
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0.0.0"
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty", "--long"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10)
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    if not desc:
        return f"v{base}"
    if "-g" in desc:
        return desc
    return f"v{base}-0-g{desc}"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Pipeline:
    def __init__(self, scenario: Scenario, out_dir: Path):
        self.sc = scenario
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._built = None
        self._written: set = set()
        self._commands: set = set()
        self._seeds: dict = {}

    # -- helpers

    def path(self, name: str) -> Path:
        return self.out / name

    def _record(self, name: str) -> Path:
        self._written.add(name)
        return self.path(name)

    def built(self):
        if self._built is None:
            c = self.sc.coefficients()
            t = build_sigma_table(c, **self.sc.build_options())
            self._built = (c, t, build_h(t, c), self.sc.functional())
        return self._built

    def write_manifest(self) -> Path:
        """Merge this run into manifest.json.

        Files and seeds accumulate across commands; ``steps`` maps each command to
        the hash of the configuration it last ran with, so artifacts produced under
        different overrides stay traceable.
        """
        mpath = self.path("manifest.json")
        old = {}
        if mpath.is_file():
            try:
                old = json.loads(mpath.read_text())
            except json.JSONDecodeError:
                old = {}
        digest = self.sc.config_hash()
        files = set(old.get("files", {})) | self._written
        steps = dict(old.get("steps", {}))
        steps.update({cmd: digest for cmd in self._commands})
        seeds = dict(old.get("seeds", {}))
        seeds.update(self._seeds)
        manifest = {
            "name": self.sc.name,
            "version": version_string(),
            "config_hash": digest,
            "config": self.sc.config,
            "steps": dict(sorted(steps.items())),
            "seeds": seeds,
            "files": {f: _sha256(self.path(f)) for f in sorted(files) if self.path(f).is_file()},
        }
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        return mpath

    # -- commands

    def build(self) -> int:
        c, t, m, _ = self.built()
        data = np.column_stack([t.grid, t.values, t.derivative])
        np.savetxt(self._record("sigma_table.csv"), data, delimiter=",", fmt="%.17g",
                   header="x,Sigma,Sigma_prime", comments="")
        m.to_csv(self._record("harmonic_map.csv"))
        rep = check_non_explosion(t).to_dict()
        rep.update({"convergence_gap": t.convergence_gap, "quadrature_error": t.quadrature_error,
                    "image_range": list(m.image_range), "sigma0_sup": m.sigma0_sup()})
        self._record("build_report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
        self._commands.add("build")
        log.info("built tables on %d nodes; non-explosion %s", t.grid.size, rep["flag"])
        return EXIT_OK

    def _require_build(self) -> None:
        for name in ("sigma_table.csv", "harmonic_map.csv"):
            if not self.path(name).is_file():
                raise MissingInput(f"{name} not found in {self.out}; run build first")

    def simulate(self) -> int:
        self._require_build()
        c, t, m, g = self.built()
        cfg_out = self.sc.config["output"]
        for engine in self.sc.engines():
            cfg = self.sc.sim_config(SCHEME[engine])
            if engine == "transformed":
                e = simulate_transformed(cfg, m, g)
            else:
                if g.growth_K is not None:
                    plan = preflight_novikov(cfg, m, g)
                    self._record("preflight.json").write_text(
                        json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
                e = simulate_weighted(cfg, m, c, g, skip_preflight=True)
            e.to_binary(self._record(f"ensemble_{engine}.bin"))
            rows = e.n_paths * (e.n_steps + 1)
            want_csv = cfg_out["csv"]
            if want_csv is True or (want_csv == "auto" and rows <= int(cfg_out["csv_max_rows"])):
                e.to_csv(self._record(f"ensemble_{engine}.csv"))
            self._seeds[engine] = cfg.seed
            log.info("%s engine: %d paths x %d steps, grid exits %d, ESS %.1f",
                     engine, e.n_paths, e.n_steps, e.grid_exits, e.ess)
        self._commands.add("simulate")
        return EXIT_OK

    def load_ensemble(self, engine: str) -> PathEnsemble:
        p = self.path(f"ensemble_{engine}.bin")
        if not p.is_file():
            raise MissingInput(f"{p.name} not found; run simulate first")
        d = read_binary(p)
        n = d["x_paths"].shape[0]
        if n == 0:
            raise MissingInput(f"{p.name} holds an empty ensemble")
        cfg = self.sc.sim_config(SCHEME[engine])
        with np.errstate(divide="ignore"):
            logw = np.log(d["weights"])
        return PathEnsemble(d["times"], d["x_paths"], d["y_paths"], np.empty((n, 0)),
                            d["weights"], logw, np.arange(n), cfg.seed, SCHEME[engine], 0, cfg)

    def verify(self) -> int:
        self._require_build()
        c, t, m, g = self.built()
        vcfg = self.sc.config["verify"]
        tests = set(vcfg["tests"])
        ens = {eng: self.load_ensemble(eng) for eng in self.sc.engines()}
        rep = V.VerificationReport(f"verification: {self.sc.name}",
                                   metadata={"config_hash": self.sc.config_hash(),
                                             "seed": self.sc.config["sim"]["seed"]})
        specs = None
        if vcfg.get("localize") is not None:
            specs = [V.MartingaleTestSpec(s.test_function, localize=float(vcfg["localize"]))
                     for s in V.default_battery(m)]
        if "weights" in tests and "weighted" in ens:
            rep.extend(V.test_weight_normalization(ens["weighted"]))
        if "martingale" in tests:
            for eng, e in ens.items():
                sub = V.martingale_battery(e, m, c, g, specs)
                for entry in sub.entries:
                    entry.name = f"[{eng}] {entry.name}"
                rep.extend(sub)
            if vcfg["negative_control"]:
                rep.entries.append(self._martingale_control(m, c, g, specs))
        if "law" in tests and len(ens) == 2:
            rep.extend(V.test_law_equivalence(
                ens["transformed"], ens["weighted"], vcfg["observables"],
                self.sc.reference_cdfs(), n_boot=int(vcfg["n_boot"])))
        if "qv" in tests:
            rep.extend(self._qv(m, c, g, vcfg))
        if "uniqueness" in tests:
            u = vcfg["uniqueness"]
            cfg = self.sc.sim_config(n_steps=int(u["n_steps"]), n_paths=int(u["n_paths"]))
            rep.extend(V.test_pathwise_uniqueness(cfg, m, g, levels=int(u["levels"])))
        self._validators(rep, m, c, g, ens)
        self._record("verify_report.json").write_text(rep.to_json() + "\n")
        self._record("verify_report.txt").write_text(rep.table() + "\n")
        print(rep.table())
        self._commands.add("verify")
        return {"PASS": EXIT_OK, "FAIL": EXIT_FAIL, "INCONCLUSIVE": EXIT_INCONCLUSIVE}[rep.status]

    def _corrupted(self, g: PathFunctional) -> PathFunctional:
        if g.is_zero:
            return PathFunctional.constant(1.0, name="corrupted: 1")
        return g.scaled(2.0)

    def _martingale_control(self, m, c, g, specs) -> V.TestResult:
        cfg = self.sc.sim_config()
        bad = simulate_transformed(cfg, m, self._corrupted(g))
        sub = V.martingale_battery(bad, m, c, g, specs)
        worst = max(abs(e.z) for e in sub.entries)
        detected = sub.status == "FAIL"
        return V.TestResult("negative control: corrupted drift detected", worst, None, None,
                            "PASS" if detected else "FAIL", {"max_abs_z": worst})

    def _qv(self, m, c, g, vcfg) -> V.VerificationReport:
        q = vcfg["qv"]
        cfg = self.sc.sim_config(n_steps=int(q["n_steps"]), n_paths=int(q["n_paths"]))
        e = simulate_transformed(cfg, m, g)
        rep = V.test_quadratic_variation(e, c)
        levels = rep.entries[0].details["levels"]
        errors = rep.entries[0].details["errors"]
        self._record("qv_levels.json").write_text(
            json.dumps({"levels": levels, "errors": errors}, indent=2) + "\n")
        if vcfg["negative_control"]:
            wrong = type(c)(lambda x: 1.25 * c.sigma(x), c.drift, c.mollifier_scale, c.eval_grid)
            bad = V.test_quadratic_variation(e, wrong).entries[0]
            rep.entries.append(V.TestResult(
                "negative control: wrong sigma detected by QV", bad.statistic, None, None,
                "PASS" if bad.status == "FAIL" else "FAIL"))
        return rep

    def _validators(self, rep, m, c, g, ens) -> None:
        e = ens.get("transformed") or next(iter(ens.values()))
        sample = e.y_paths[: min(1000, e.n_paths)]
        for vr in self._validation_reports(m, c, g, e, sample):
            rep.entries.append(V.TestResult(f"assumption {vr.name}", vr.worst_ratio, None, None,
                                            vr.status, {k: v for k, v in vr.to_dict().items()
                                                        if k not in ("name", "status", "worst_ratio")}))

    def _validation_reports(self, m, c, g, e, sample):
        out = []
        if g.growth_K is not None:
            out.append(validate_growth(g, m, c, e.times, sample))
        if g.lipschitz_K is not None and e.n_paths >= 2:
            half = min(500, e.n_paths // 2)
            out.append(validate_lipschitz(g, m, e.times, (e.y_paths[:half], e.y_paths[half:2 * half])))
        return out

    def plot(self) -> int:
        self._require_build()
        data = np.loadtxt(self.path("harmonic_map.csv"), delimiter=",", skiprows=1, ndmin=2)
        ens = {eng: self.load_ensemble(eng) for eng in self.sc.engines()}
        plots.plot_h_sigma0(data[:, 0], data[:, 2], data[:, 4], self._record("h_sigma0.svg"))
        first = ens.get("transformed") or next(iter(ens.values()))
        plots.plot_paths(first.times, first.x_paths, self._record("paths.svg"))
        levels, errors = _qv_curve(first, self.built()[0])
        plots.plot_qv_refinement(levels, errors, self._record("qv_refinement.svg"))
        plots.plot_marginals({eng: (e.x_paths[:, -1], e.weights) for eng, e in ens.items()},
                             self._record("marginals.svg"))
        self._commands.add("plot")
        return EXIT_OK


def _qv_curve(e: PathEnsemble, c) -> tuple:
    """Mean relative realized-QV error on every dyadic coarsening of the ensemble grid."""
    x = e.x_paths
    n = e.n_steps
    dt = e.T / n
    sig2 = c.sigma(x) ** 2
    target = dt * (sig2.sum(axis=1) - 0.5 * (sig2[:, 0] + sig2[:, -1]))
    levels, errors = [], []
    stride = 1
    while n % stride == 0 and n // stride >= 4:
        sub = x[:, ::stride]
        rv = np.sum(np.diff(sub, axis=1) ** 2, axis=1)
        levels.append(float(np.log2(n // stride)))
        errors.append(float(np.mean(np.abs(rv - target) / target)))
        stride *= 2
    return levels[::-1], errors[::-1]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distdrift", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["build", "simulate", "verify", "plot", "all"])
    p.add_argument("--scenario", required=True, type=Path, help="scenario YAML file")
    p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="simulation seed override")
    p.add_argument("--paths", type=int, help="number of paths override")
    p.add_argument("--steps", type=int, help="number of time steps override")
    p.add_argument("--engine", choices=["transformed", "weighted", "both"])
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    sim = {k: v for k, v in (("seed", args.seed), ("n_paths", args.paths),
                             ("n_steps", args.steps), ("engine", args.engine)) if v is not None}
    overrides = {"sim": sim} if sim else {}
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_BUILD
    try:
        sc = Scenario.load(args.scenario, overrides)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUILD
    out = args.out if args.out is not None else Path(str(sc.config["output"]["dir"]))
    pipe = Pipeline(sc, out)
    steps = ["build", "simulate", "verify", "plot"] if args.command == "all" else [args.command]
    failure = {"build": EXIT_BUILD, "simulate": EXIT_SIM, "verify": EXIT_INPUT, "plot": EXIT_INPUT}
    code = EXIT_OK
    try:
        for step in steps:
            try:
                rc = getattr(pipe, step)()
            except MissingInput as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INPUT
            except (DistDriftError, ValueError) as exc:
                print(f"error in {step}: {type(exc).__name__}: {exc}", file=sys.stderr)
                return failure[step]
            if step == "verify":
                code = rc
    finally:
        if pipe._written:
            pipe.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
