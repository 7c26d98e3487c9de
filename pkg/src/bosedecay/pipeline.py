"""Config-driven pipeline: hartree -> kernels -> assembly -> solve -> reports.

Stage results that are expensive or reused across subcommands (Hartree
solution, kernels, ground states) are kept in ``<output_dir>/.cache`` keyed
by a hash of exactly the configuration they depend on, so editing an
unrelated section never invalidates them and editing a relevant one always
does.
"""

import hashlib
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import build_model, config_hash
from .decay import (
    RESOLUTION,
    certify,
    fit_decay_rate,
    oracle_profile,
    sector_distribution,
    tail_energy_check,
    window_monotone,
    write_profile_csv,
    write_svg,
)
from .fock import FockBasis, FockVector
from .hamiltonian import (
    assemble_blocks,
    assemble_bogoliubov,
    assemble_full,
    compute_kernels,
    write_operator,
)
from .hartree import HartreeSolution, mean_field_operator, solve_hartree
from .lemmas import (
    check_K0_gap,
    check_K1_bound,
    check_K2_bound,
    check_K2_coulomb,
    check_K3_bound,
    check_K4_bound,
    constant_drift,
    coulomb_surrogate,
    delta_sequence,
)
from .solver import GroundState, bogoliubov_oracle, lanczos_ground_state
from .potentials import save_grid_function

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` holds the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class MissingArtifact(LookupError):
    def __init__(self, stage):
        super().__init__(f"required stage '{stage}' has no cached result for this config")
        self.stage = stage


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x):
    return f"{x:.12g}"


class StageStore:
    """Content-addressed cache of stage outputs (``npz`` arrays plus ``json`` metadata)."""

    def __init__(self, root):
        self.root = os.path.join(root, ".cache")

    def _paths(self, stage, key):
        base = os.path.join(self.root, stage, key[:16])
        return base + ".npz", base + ".json"

    def has(self, stage, key):
        return all(os.path.exists(p) for p in self._paths(stage, key))

    def get(self, stage, key):
        npz, meta = self._paths(stage, key)
        if not self.has(stage, key):
            return None
        with open(meta) as fh:
            m = json.load(fh)
        with np.load(npz, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        return arrays, m

    def put(self, stage, key, arrays, meta):
        npz, mpath = self._paths(stage, key)
        os.makedirs(os.path.dirname(npz), exist_ok=True)
        np.savez(npz, **arrays)
        with open(mpath, "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)


@dataclass
class RunManifest:
    config_hash: str
    output_dir: str
    versions: dict
    seeds: dict
    wall_times: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    cache_hits: list = field(default_factory=list)
    status: str = "ok"
    failed_stage: str = None
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "output_dir": self.output_dir,
            "versions": self.versions,
            "seeds": self.seeds,
            "wall_times": self.wall_times,
            "files": self.files,
            "cache_hits": self.cache_hits,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "summary": self.summary,
        }

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _versions():
    import scipy
    import sklearn

    return {"bosedecay": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "python": platform.python_version()}


class Run:
    """One configured run: stage accessors with caching and output bookkeeping."""

    def __init__(self, cfg, output_dir=None, use_cache=True):
        self.cfg = cfg
        self.out = output_dir or cfg["output_dir"]
        os.makedirs(self.out, exist_ok=True)
        self.store = StageStore(self.out)
        self.use_cache = use_cache
        self.manifest = RunManifest(
            config_hash=config_hash(cfg), output_dir=os.path.abspath(self.out), versions=_versions(),
            seeds={"solve": cfg["solve"]["seed"], "lemmas": cfg["analyses"]["lemmas"]["seed"]})
        self._resume_manifest()
        self._memo = {}
        self.problem, self.potential = build_model(cfg)

    def _resume_manifest(self):
        # subcommands on the same config accumulate into one manifest
        path = self.path("manifest.json")
        if not os.path.exists(path):
            return
        try:
            with open(path) as fh:
                old = json.load(fh)
        except (OSError, ValueError):
            return
        if old.get("config_hash") != self.manifest.config_hash:
            return
        self.manifest.wall_times = old.get("wall_times", {})
        self.manifest.files = [f for f in old.get("files", []) if os.path.exists(self.path(f["path"]))]

    # -- bookkeeping ------------------------------------------------------
    def path(self, name):
        return os.path.join(self.out, name)

    def produced(self, name):
        p = self.path(name)
        entry = {"path": name, "sha256": sha256_file(p), "bytes": os.path.getsize(p)}
        self.manifest.files = [f for f in self.manifest.files if f["path"] != name] + [entry]

    def write_json(self, name, doc):
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        self.produced(name)

    def stage(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kw)
        except (MissingArtifact, StageError):
            raise
        except Exception as exc:
            self.manifest.status = "failed"
            self.manifest.failed_stage = name
            self.finish()
            raise StageError(name, exc) from exc
        self.manifest.wall_times[name] = time.perf_counter() - t0
        return result

    def finish(self):
        self.manifest.files.sort(key=lambda f: f["path"])
        self.manifest.write(self.path("manifest.json"))
        return self.manifest

    # -- keys ---------------------------------------------------------------
    def key(self, stage, **extra):
        sections = {"model": self.cfg["model"], "hartree": self.cfg["hartree"], "m": self.cfg["many_body"]["m"]}
        if stage in ("ground_state",):
            sections.update(many_body=self.cfg["many_body"], solve=self.cfg["solve"])
        sections.update(extra)
        sections["stage"] = stage
        sections["version"] = __version__
        return config_hash(sections)

    # -- stages -------------------------------------------------------------
    def hartree(self, require_cached=False):
        if "hartree" in self._memo:
            return self._memo["hartree"]
        key = self.key("hartree")
        hit = self.store.get("hartree", key) if self.use_cache else None
        if hit is None and require_cached:
            raise MissingArtifact("hartree")
        if hit is not None:
            a, m = hit
            sol = HartreeSolution(problem=self.problem, phi=a["phi"], e_H=m["e_H"], mu=m["mu"],
                                  h_matrix=mean_field_operator(self.problem, a["phi"]), tau=m["tau"],
                                  eigenvalues=a["eigenvalues"], modes=a["modes"],
                                  momenta=a["momenta"] if m["has_momenta"] else None,
                                  energies=list(a["energies"]), residuals=list(a["residuals"]))
            self.manifest.cache_hits.append("hartree")
        else:
            hc = self.cfg["hartree"]
            sol = solve_hartree(self.problem, tol=hc["tol"], max_iter=hc["max_iter"], init=hc["init"],
                                n_modes=self.cfg["many_body"]["m"])
            arrays = {"phi": sol.phi, "eigenvalues": sol.eigenvalues, "modes": sol.modes,
                      "energies": np.array(sol.energies), "residuals": np.array(sol.residuals),
                      "momenta": sol.momenta if sol.momenta is not None else np.zeros(0, dtype=int)}
            self.store.put("hartree", key, arrays, {"e_H": sol.e_H, "mu": sol.mu, "tau": sol.tau,
                                                    "has_momenta": sol.momenta is not None})
        self._memo["hartree"] = sol
        return sol

    def kernels(self):
        if "kernels" not in self._memo:
            sol = self.hartree()
            self._memo["kernels"] = compute_kernels(sol, self.potential, self.cfg["many_body"]["m"],
                                                    method=self.cfg["many_body"]["kernel_method"])
        return self._memo["kernels"]

    def basis(self, M):
        k = ("basis", M)
        if k not in self._memo:
            self._memo[k] = FockBasis(self.cfg["many_body"]["m"], M)
        return self._memo[k]

    def blocks(self, M):
        k = ("blocks", M)
        if k not in self._memo:
            self._memo[k] = assemble_blocks(self.kernels(), self.basis(M))
        return self._memo[k]

    def hamiltonian(self, M=None, variant=None):
        mb = self.cfg["many_body"]
        M = mb["M"] if M is None else M
        variant = mb["variant"] if variant is None else variant
        k = ("H", M, variant)
        if k not in self._memo:
            sol = self.hartree()
            ks = self.kernels()
            if variant == "full":
                H = assemble_full(mb["N"], self.blocks(M), self.basis(M), tau=sol.tau, momenta=ks.momenta)
            else:
                H = assemble_bogoliubov(self.blocks(M), self.basis(M), tau=sol.tau, momenta=ks.momenta)
            self._memo[k] = H
        return self._memo[k]

    def ground_state(self, M=None, variant=None, require_cached=False):
        mb = self.cfg["many_body"]
        M = mb["M"] if M is None else M
        variant = mb["variant"] if variant is None else variant
        k = ("gs", M, variant)
        if k in self._memo:
            return self._memo[k]
        key = self.key("ground_state", M=M, variant=variant)
        hit = self.store.get("ground_state", key) if self.use_cache else None
        if hit is None and require_cached:
            raise MissingArtifact("solve")
        basis = self.basis(M)
        if hit is not None:
            a, m = hit
            gs = GroundState(energy=m["energy"], vector=FockVector(basis, a["amplitudes"]),
                             residual=m["residual"], meta=m["meta"])
            self.manifest.cache_hits.append(f"ground_state[M={M},{variant}]")
        else:
            sc = self.cfg["solve"]
            gs = lanczos_ground_state(self.hamiltonian(M, variant), tol=sc["tol"], seed=sc["seed"],
                                      max_iter=sc["max_iter"])
            meta = {k2: v for k2, v in gs.meta.items() if k2 != "ritz_history"}
            self.store.put("ground_state", key, {"amplitudes": gs.vector.amplitudes},
                           {"energy": gs.energy, "residual": gs.residual, "meta": meta})
        self._memo[k] = gs
        return gs

    def oracle(self):
        if "oracle" not in self._memo:
            trunc = self.cfg["analyses"]["decay"]["oracle_truncation"]
            self._memo["oracle"] = bogoliubov_oracle(self.kernels(), truncation=trunc)
        return self._memo["oracle"]

    @property
    def homogeneous(self):
        return self.problem.homogeneous


# ---------------------------------------------------------------------------
# stage writers
# ---------------------------------------------------------------------------


def write_hartree(run):
    sol = run.hartree()
    grid = sol.grid
    save_grid_function(run.path("phi.csv"), grid.x, sol.phi)
    run.produced("phi.csv")
    with open(run.path("modes.csv"), "w") as fh:
        cols = []
        for j in range(sol.n_modes):
            cols += [f"re_u{j}", f"im_u{j}"]
        fh.write("x," + ",".join(cols) + "\n")
        for i, x in enumerate(grid.x):
            vals = []
            for j in range(sol.n_modes):
                z = complex(sol.modes[i, j])
                vals += [_fmt(z.real), _fmt(z.imag)]
            fh.write(_fmt(x) + "," + ",".join(vals) + "\n")
    run.produced("modes.csv")
    doc = {"e_H": sol.e_H, "mu": sol.mu, "tau": sol.tau, "iterations": sol.iterations,
           "final_residual": sol.residuals[-1], "mode_energies": sol.eigenvalues,
           "momenta": None if sol.momenta is None else [int(p) for p in sol.momenta],
           "grid": grid.to_dict(), "potential": run.potential.to_dict()}
    run.write_json("hartree.json", doc)
    return doc


def write_assembly(run, export=False):
    H = run.hamiltonian()
    basis = H.basis
    basis.write_sector_table(run.path("sector_table.csv"))
    run.produced("sector_table.csv")
    doc = {"dim": basis.dim, "nnz": int(H.matrix.nnz), "variant": H.variant, "N": H.N,
           "hermiticity_defect": H.hermiticity_defect(), "kernel_method": run.kernels().method}
    if H.momenta is not None:
        doc["momentum_commutator"] = H.momentum_commutator_norm()
    if export:
        write_operator(run.path("hamiltonian.coo"), H.matrix,
                       {"variant": H.variant, "N": H.N, "m": basis.m, "M": basis.M, "ordering": "sector-lex"})
        run.produced("hamiltonian.coo")
    run.write_json("assembly.json", doc)
    return doc


def write_ground_state(run, require_cached=False):
    gs = run.ground_state(require_cached=require_cached)
    gs.save(run.path("ground_state.bdfv"))
    run.produced("ground_state.bdfv")
    doc = {"energy": gs.energy, "residual": gs.residual,
           **{k: v for k, v in gs.meta.items() if k != "ritz_history"}}
    run.write_json("ground_state.json", doc)
    return gs


def write_decay(run, require_cached=False, parity=None, fit_range=None):
    dc = run.cfg["analyses"]["decay"]
    parity = dc["parity"] if parity is None else parity
    fit_range = dc["fit_range"] if fit_range is None else fit_range
    gs = run.ground_state(require_cached=require_cached)
    variant = run.cfg["many_body"]["variant"]
    prof = sector_distribution(gs, source=variant)
    write_profile_csv(run.path("profile.csv"), prof, L=dc["csv_L"])
    run.produced("profile.csv")
    summary = {"P0": float(prof.P[0]), "valid_max": prof.valid_max,
               "window_monotone": all(window_monotone(prof, L) for L in range(0, max(prof.valid_max // 2, 1)))}
    try:
        fit = fit_decay_rate(prof, tuple(fit_range), parity)
        summary["fit"] = fit.to_dict()
    except ValueError as exc:
        summary["fit"] = {"error": str(exc)}
    odd = prof.P[1::2]
    summary["max_odd_sector"] = float(odd.max()) if len(odd) else 0.0
    stab = dc["stability_M"]
    if stab is not None:
        gs2 = run.ground_state(M=stab, require_cached=False)
        P2 = sector_distribution(gs2, source=variant).P
        with open(run.path("stability.csv"), "w") as fh:
            fh.write(f"ell,P_M{prof.M},P_M{stab},rel_change\n")
            rel = []
            for ell in range(prof.valid_max + 1):
                r = abs(P2[ell] - prof.P[ell]) / prof.P[ell] if prof.P[ell] > 0 else 0.0
                rel.append(r)
                fh.write(f"{ell},{_fmt(prof.P[ell])},{_fmt(P2[ell])},{_fmt(r)}\n")
        run.produced("stability.csv")
        # sectors at rounding level (momentum-forbidden ones) carry no relative information
        hi = fit_range[1]
        resolved = [r for ell, r in enumerate(rel[: hi + 1]) if prof.P[ell] > RESOLUTION]
        summary["stability_max_rel_change"] = max(resolved)
        summary["stability_range"] = [0, hi]
    tail = tail_energy_check(run.hamiltonian(), gs, dc["tail_cut"])
    summary["tail"] = tail
    cert = None
    if run.homogeneous:
        o = run.oracle()
        oprof = oracle_profile(o)
        write_profile_csv(run.path("oracle_profile.csv"), oprof, L=dc["csv_L"])
        run.produced("oracle_profile.csv")
        summary["oracle"] = {"energy": o.energy, "alpha": o.alpha, "deficit": o.deficit,
                             "pairs": [int(p[0]) for p in o.pairs]}
        cert, _ = certify(oprof, dc["L_max"])
    write_svg(run.path("decay.svg"), prof, cert)
    run.produced("decay.svg")
    run.write_json("decay.json", summary)
    return summary


def write_certificate(run, source=None, L_max=None, require_cached=False):
    """Certificate JSON; ``{"verified": false, "reason": ...}`` when no stride qualifies."""
    dc = run.cfg["analyses"]["decay"]
    L_max = dc["L_max"] if L_max is None else L_max
    if source is None:
        source = "oracle" if run.homogeneous else "full"
    if source == "oracle":
        if not run.homogeneous:
            raise ValueError("the oracle profile exists only on a homogeneous torus")
        prof = oracle_profile(run.oracle())
    else:
        prof = sector_distribution(run.ground_state(require_cached=require_cached),
                                   source=run.cfg["many_body"]["variant"])
    cert, table = certify(prof, L_max)
    if cert is None:
        doc = {"verified": False, "source": source, "reason": f"no L <= {L_max} with sigma > 2",
               "table": table}
    else:
        doc = dict(cert.to_dict(), source=source, table=table)
    run.write_json("certificate.json", doc)
    return cert, doc


def write_lemmas(run, which=None, samples=None, seed=None):
    lc = run.cfg["analyses"]["lemmas"]
    which = lc["which"] if which is None else which
    samples = lc["samples"] if samples is None else samples
    seed = lc["seed"] if seed is None else seed
    mb = run.cfg["many_body"]
    results = {}
    need_blocks = any(w in which for w in ("k1", "k2", "k3", "k4", "gap"))
    if need_blocks:
        ks, basis, blocks = run.kernels(), run.basis(mb["M"]), run.blocks(mb["M"])
    for w in which:
        if w == "k1":
            rep = check_K1_bound(ks, basis, samples=samples, seed=seed, blocks=blocks)
        elif w == "k2":
            rep = check_K2_bound(ks, basis, samples=samples, seed=seed, blocks=blocks)
        elif w == "gap":
            rep = check_K0_gap(run.hamiltonian(), samples=samples, seed=seed)
        elif w in ("k3", "k4"):
            fn = check_K3_bound if w == "k3" else check_K4_bound
            small, large = lc["drift_samples"]
            a = fn(ks, basis, delta=lc["delta"], N=mb["N"], samples=small, seed=seed, blocks=blocks)
            rep = fn(ks, basis, delta=lc["delta"], N=mb["N"], samples=large, seed=seed + 1, blocks=blocks)
            rep.extra["constant_small_sample"] = a.empirical_constant
            rep.extra["drift"] = constant_drift(a, rep)
        elif w == "k2c":
            cc = run.cfg["analyses"]["coulomb"]
            sur = coulomb_surrogate(cc["lambda"], kappa_min=min(cc["kappas"]), n=cc["n"])
            rep = check_K2_coulomb(cc["lambda"], cc["kappas"], eps=cc.get("epsilon"), M=cc["M"],
                                   samples=cc["samples"], seed=seed, surrogate=sur)
        else:
            raise ValueError(f"unknown lemma {w!r}")
        rep.to_json(run.path(f"lemma_{w}.json"))
        run.produced(f"lemma_{w}.json")
        if rep.failures:
            os.makedirs(run.path("failures"), exist_ok=True)
            for p in rep.persist_failures(run.path("failures")):
                run.produced(os.path.relpath(p, run.out))
        results[w] = rep
    return results


def coulomb_split_table(lam, kappas, n=512, width=1.0):
    """Rows ``(kappa, delta, v_kappa(0))`` for a Gaussian condensate; delta must decrease."""
    sur = coulomb_surrogate(lam, width=width, kappa_min=min(kappas), n=n)
    deltas = delta_sequence(lam, kappas, sur)
    return [(k, d, lam / k) for k, d in zip(kappas, deltas)]


def write_coulomb_split(run_dir, lam, kappas, n=512):
    rows = coulomb_split_table(lam, kappas, n)
    path = os.path.join(run_dir, "coulomb_split.csv")
    with open(path, "w") as fh:
        fh.write("kappa,delta,v_kappa_origin\n")
        for k, d, v0 in rows:
            fh.write(f"{_fmt(k)},{_fmt(d)},{_fmt(v0)}\n")
    return path, rows


def run_pipeline(cfg, output_dir=None, use_cache=True):
    """Execute every stage in dependency order and write the manifest."""
    run = Run(cfg, output_dir, use_cache)
    run.stage("hartree", write_hartree, run)
    run.stage("assemble", write_assembly, run)
    gs = run.stage("solve", write_ground_state, run)
    dec = run.stage("decay", write_decay, run)
    cert, cdoc = run.stage("certify", write_certificate, run)
    lem = run.stage("lemmas", write_lemmas, run)
    cc = cfg["analyses"]["coulomb"]

    def _coulomb():
        path, rows = write_coulomb_split(run.out, cc["lambda"], cc["kappas"], cc["n"])
        run.produced("coulomb_split.csv")
        return rows

    run.stage("coulomb-split", _coulomb)
    run.manifest.summary = {
        "energy": gs.energy,
        "fit": dec.get("fit"),
        "certificate_verified": bool(cdoc.get("verified")),
        "lemma_violations": {k: r.violations for k, r in lem.items()},
    }
    return run.finish()
