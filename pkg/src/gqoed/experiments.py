"""Problem builders and the batch experiment driver."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, fem
from . import criteria as cr
from .bip import Design, InverseProblem, build_problem
from .config import ExperimentConfig
from .design import DesignSearchResult, greedy_minimize, random_design
from .goal import GoalFunctional, QuadraticGoal, TracerGoal, channel_permeability, gaussian_bump, \
    restricted_energy_goal
from .linop import SAMPLE, substream
from .prior import BiLaplacianPrior

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass
class Experiment:
    config: ExperimentConfig
    mesh: fem.Mesh
    prior: BiLaplacianPrior
    problem: InverseProblem
    goal: GoalFunctional
    m_true: np.ndarray

    @property
    def quadratic(self) -> bool:
        return isinstance(self.goal, QuadraticGoal)


def truth_field(mesh: fem.Mesh, cfg: ExperimentConfig) -> np.ndarray:
    m = np.full(mesh.num_nodes, float(cfg.m_true.baseline))
    for b in cfg.m_true.bumps:
        m += gaussian_bump(mesh, b.center, b.width, b.amplitude)
    return m


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    mesh = fem.build_mesh(cfg.mesh_n)
    prior = BiLaplacianPrior(mesh, cfg.prior.a1, cfg.prior.a2, cfg.prior.mean)
    coords = fem.sensor_grid(cfg.sensors_per_side, cfg.sensor_margin)
    g = cfg.goal
    sub = fem.subdomain_weight(mesh, g.rectangles)
    if cfg.problem == "example1":
        bcs = fem.BoundarySpec(((("left", "top"), 0.0),))
        solver = fem.elliptic_solver(mesh, g.alpha, velocity=tuple(g.velocity), bcs=bcs)
        problem = build_problem(mesh, solver, prior, coords, cfg.sigma2)
        goal = restricted_energy_goal(solver, prior.mass, fem.assemble_mass(mesh, sub))
    else:
        k = g.kappa
        kappa = channel_permeability(mesh, k.center, k.width, k.contrast, k.low)
        source = gaussian_bump(mesh, g.source.center, g.source.width, g.source.amplitude)
        goal = TracerGoal(mesh, kappa, g.alpha, source, sub, p_left=g.p_left, mass=prior.mass)
        # the pressure equation is the inversion model; Dirichlet data give an affine offset
        p0 = goal.pressure.solve(np.zeros(mesh.num_nodes), goal._p_values)
        problem = build_problem(mesh, goal.pressure, prior, coords, cfg.sigma2, offset_state=p0)
    return Experiment(cfg, mesh, prior, problem, goal, truth_field(mesh, cfg))


def expansion_points(exp: Experiment) -> list[np.ndarray]:
    pts = [exp.prior.mean.copy()]
    e = exp.config.expansion
    if e.policy == "prior_samples":
        pts += exp.prior.sample(e.count, e.seed)
    return pts


def make_criterion(exp: Experiment, method: str, gd: Optional[cr.GoalDerivatives] = None,
                   estimator: Optional[str] = None, log: Optional[list] = None,
                   svd: Optional[cr.SVDPrecompute] = None) -> Callable[[np.ndarray], float]:
    """Map a 0/1 weight vector to a criterion value for greedy search."""
    cfg = exp.config.criterion
    estimator = estimator or cfg.estimator
    problem = exp.problem

    def evaluate(w):
        design = problem.design(w)
        k = max(1, min(cfg.rank, design.size))
        if method == "aopt":
            est = cr.CriterionEstimate(cr.a_opt(problem, design, k, cfg.seed), "a-opt", k,
                                       cfg.seed, design.hash())
        elif method == "gell":
            est = cr.CriterionEstimate(cr.gl_crit(problem, design, gd, k, cfg.seed), "g-ell", k,
                                       cfg.seed, design.hash())
        elif estimator == "spectral":
            est = cr.gq_spectral(problem, design, gd, k, cfg.seed)
        elif estimator == "svd":
            est = cr.gq_svd(problem, design, gd, svd, cfg.seed)
        elif estimator == "randomized":
            est = cr.gq_randomized(problem, design, gd, cfg.probes, cfg.seed)
        else:
            est = cr.CriterionEstimate(cr.gq_dense_oracle(problem, design, gd), "dense", 0,
                                       cfg.seed, design.hash())
        if log is not None:
            log.append(est)
        return est.value

    return evaluate


def goal_derivatives(exp: Experiment, m_bar) -> cr.GoalDerivatives:
    """Derivatives at ``m_bar`` with the Hessian materialized (desk scale)."""
    gd = cr.GoalDerivatives.from_goal(exp.goal, m_bar, exp.prior.mean)
    return gd.materialize()


def sample_posterior_goal(problem: InverseProblem, design: Design, y, goal: GoalFunctional,
                          count: int, seed: int, zero_noise: bool = False,
                          cell: tuple = ()) -> np.ndarray:
    """Goal values at ``count`` posterior draws (dense square-root factor)."""
    m_map = problem.compute_map(design, y)
    if count == 0:
        return np.empty(0)
    if zero_noise:
        return goal.values([m_map] * count)
    L = problem.posterior_sample_factor(design)
    Z = substream(seed, SAMPLE, *cell).standard_normal((problem.N, count))
    samples = (m_map[:, None] + L @ Z).T
    return np.asarray(goal.values(samples), dtype=float)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    out = {"n_samples": len(v)}
    if len(v) >= 2:
        out.update(mean=float(v.mean()), std=float(v.std(ddof=1)))
        try:
            out["cv"] = cr.cv(v)
        except cr.DegenerateCV:
            out["cv"] = float("nan")
        for q, val in zip(QUANTILES, np.quantile(v, QUANTILES)):
            out[f"q{q * 100:g}"] = float(val)
    return out


SUMMARY_FIELDS = ["method", "k", "expansion", "design", "n_samples", "mean", "std", "cv",
                  "q2.5", "q25", "q50", "q75", "q97.5", "variance"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class RunArtifact:
    designs: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    densities: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def rows(self, method: str) -> list[dict]:
        return [r for r in self.summary if r["method"] == method]


def run_greedy(exp: Experiment, method: str, k: int, gd: Optional[cr.GoalDerivatives] = None,
               log: Optional[list] = None) -> DesignSearchResult:
    svd = None
    if method == "gq" and exp.config.criterion.estimator == "svd":
        svd = cr.precompute_svd(exp.problem, min(exp.problem.d, exp.problem.N),
                                exp.config.criterion.seed)
    crit = make_criterion(exp, method, gd, log=log, svd=svd)
    return greedy_minimize(crit, exp.problem.d, k)


def run_experiment(cfg: ExperimentConfig, outdir=None) -> RunArtifact:
    """Greedy designs per method, posterior goal samples, variances and CVs."""
    t_start = time.time()
    art = RunArtifact()
    art.manifest = {"version": __version__, "config_hash": cfg.hash(), "config": cfg.to_dict(),
                    "seeds": {"master": cfg.seed, "criterion": cfg.criterion.seed,
                              "expansion": cfg.expansion.seed},
                    "status": "running"}
    try:
        _run(cfg, art)
        art.manifest["status"] = "complete"
    except Exception as exc:
        art.manifest["status"] = "aborted"
        art.manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        art.manifest["wall_seconds"] = time.time() - t_start
        if outdir is not None:
            write_artifact(art, outdir)
    return art


def _run(cfg: ExperimentConfig, art: RunArtifact):
    exp = build_experiment(cfg)
    problem, goal = exp.problem, exp.goal
    y = problem.synthesize_data(exp.m_true, cfg.seed)
    kmax = max(cfg.design_sizes, default=0)

    def record(method, k, j, w, cell_seed_key):
        design = problem.design(w)
        vals = sample_posterior_goal(problem, design, y, goal, cfg.posterior_samples, cfg.seed,
                                     cell=cell_seed_key)
        row = {"method": method, "k": k, "expansion": j, "design": design.hash()}
        row.update(_stats(vals))
        if exp.quadratic:
            row["variance"] = cr.posterior_goal_variance(problem, design, y, goal)
        art.summary.append(row)
        return vals

    # prior diagnostics
    w0 = np.zeros(problem.d, dtype=np.int64)
    art.manifest["prior_diagnostics"] = {
        "trace_prior_covariance": float(np.trace(exp.prior.dense_covariance)),
        "goal_at_prior_mean": float(goal.value(exp.prior.mean)),
        "goal_at_truth": float(goal.value(exp.m_true)),
    }
    art.densities[("prior", 0)] = [(0, record("prior", 0, 0, w0, (0,)))]
    if kmax == 0:
        return

    points = expansion_points(exp)
    art.manifest["n_expansion_points"] = len(points)
    gds = [goal_derivatives(exp, m) for m in points] if ({"gell", "gq"} & set(cfg.methods)) else []
    for method in cfg.methods:
        runs = [(0, None)] if method == "aopt" else list(enumerate(gds))
        if exp.quadratic and method != "aopt":
            runs = runs[:1]  # quadratic goals: derivatives do not depend on the expansion point
        for j, gd in runs:
            log: list = []
            res = run_greedy(exp, method, kmax, gd, log)
            art.designs.setdefault(method, {})[str(j)] = {
                "indices": res.indices, "trace": res.trace, "n_evaluations": res.n_evaluations}
            for est in log:
                art.criteria.append({"method": method, "expansion": j, **json.loads(est.to_json())})
            for k in cfg.design_sizes:
                w = np.zeros(problem.d, dtype=np.int64)
                w[res.indices[:k]] = 1
                vals = record(method, k, j, w, (k, j))
                art.densities.setdefault((method, k), []).append((j, vals))
    if exp.quadratic and cfg.random_designs:
        for k in cfg.design_sizes:
            for r in range(cfg.random_designs):
                w = random_design(problem.d, k, cfg.seed * 100003 + k * 1009 + r)
                design = problem.design(w)
                art.summary.append({"method": "random", "k": k, "expansion": r,
                                    "design": design.hash(), "n_samples": 0,
                                    "variance": cr.posterior_goal_variance(problem, design, y, goal)})


def write_artifact(art: RunArtifact, outdir) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "designs.json").write_text(json.dumps(art.designs, indent=1, sort_keys=True))
    with open(out / "criteria.jsonl", "w") as fh:
        for rec in art.criteria:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    files = []
    for (method, k), cells in sorted(art.densities.items(), key=lambda t: (t[0][0], t[0][1])):
        name = f"goal_density_{method}_{k}.csv"
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["expansion", "sample", "goal"])
        for j, vals in cells:
            for i, v in enumerate(vals):
                wr.writerow([j, i, repr(float(v))])
        (out / name).write_text(buf.getvalue())
        files.append(name)
    buf = io.StringIO()
    wr = csv.DictWriter(buf, SUMMARY_FIELDS, lineterminator="\n", extrasaction="ignore")
    wr.writeheader()
    for row in art.summary:
        wr.writerow({k: _fmt(v) for k, v in row.items()})
    (out / "summary.csv").write_text(buf.getvalue())
    manifest = dict(art.manifest)
    manifest["outputs"] = ["designs.json", "criteria.jsonl", "summary.csv", *files]
    manifest["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
