"""
Command-line entry point for feasible-space exploration runs

    python -m opfx collect --case opfx/data/cases/case3.m --objective f36 --n 50
    python -m opfx exhaust --case opfx/data/cases/case3.m --m 3 --t 5
    python -m opfx compare --library runs/case3_f36.jsonl --exhaustive runs/case3_m3_t5.jsonl
    python -m opfx score --tables runs/case3_distances.csv runs/case5_distances.csv
    python -m opfx replay --manifest runs/case3_f36.manifest.json
"""
import argparse
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import pandas as pd
from loguru import logger
from pydantic import ValidationError

from opfx import __version__
from opfx.config import Settings, configure_logging, get_settings
from opfx.errors import (
    ArtifactMismatchError,
    CaseParseError,
    CaseReferenceError,
    DuplicateObjectiveError,
    PartitionCapError,
    SeedInfeasibleError,
    SingularBranchError,
    SolverAbort,
    UnknownObjectiveError,
)
from opfx.grid.case_model import Network, build_admittance, parse_case, validate
from opfx.metrics.set_metrics import (
    DistanceTable,
    InjectionSet,
    NormKind,
    pick_best,
    progression,
    score,
    score_frame,
)
from opfx.models.library import SolutionLibrary
from opfx.models.objective_catalog import ObjectiveCatalog, default_catalog
from opfx.sampling.exhaustive_sampler import ExhaustiveConfig
from opfx.sampling.exhaustive_sampler import run as run_exhaustive
from opfx.sampling.sequential_collector import CollectorConfig, DnfPolicy, SequentialCollector
from opfx.services import storage
from opfx.solvers.nlp_solver import SolverOptions

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _load_case(path: str) -> Tuple[Network, str]:
    text = Path(path).read_text(encoding="utf-8")
    net = parse_case(text, name=Path(path).stem)
    violations = validate(net)
    if violations:
        for v in violations:
            logger.error(f"{v.element} {v.index if v.index is not None else ''} {v.field}: {v.message}")
        raise CaseParseError(f"{path} failed validation with {len(violations)} violations")
    return net, text


def _catalog(args: argparse.Namespace) -> ObjectiveCatalog:
    if not getattr(args, "extra_objectives", None):
        return default_catalog()
    catalog = ObjectiveCatalog(default_catalog().specs())
    catalog.register_yaml(args.extra_objectives)
    return catalog


def _solver_options(args: argparse.Namespace) -> SolverOptions:
    return SolverOptions(
        feasibility_tol=args.feasibility_tol,
        stationarity_tol=args.stationarity_tol,
        max_iter=args.max_iter,
    )


def _norms(text: str) -> List[NormKind]:
    return [NormKind(name.strip()) for name in text.split(",") if name.strip()]


def _manifest(args: argparse.Namespace, **fields) -> storage.RunManifest:
    config = {key: value for key, value in vars(args).items() if key != "func"}
    return storage.RunManifest(command=args.command, config=config, **fields)


def cmd_collect(args: argparse.Namespace) -> int:
    """Grow a solution library with one objective"""
    net, text = _load_case(args.case)
    catalog = _catalog(args)
    spec = catalog.get(args.objective)
    cfg = CollectorConfig(
        objective_id=spec.id,
        n=args.n,
        dnf_policy=DnfPolicy(args.dnf_policy),
        perturbation_scale=args.perturbation_scale,
        seed=args.seed,
        solver=_solver_options(args),
        guard_eps=args.guard_eps,
        exp_clamp=args.exp_clamp,
    )
    out = Path(args.out)
    stem = f"{net.name}_{spec.id}"
    paths = {
        "library": str(out / f"{stem}.jsonl"),
        "csv": str(out / f"{stem}.csv"),
        "manifest": str(out / f"{stem}.manifest.json"),
    }

    started = time.perf_counter()
    code = EXIT_OK
    try:
        lib = SequentialCollector(net, cfg, catalog, show_progress=not args.quiet).collect()
    except SeedInfeasibleError as e:
        logger.error(str(e))
        lib = SolutionLibrary.empty(net, spec.id)
        code = EXIT_INFEASIBLE
    if cfg.n > 1 and len(lib) == 1 and lib.dnf_events:
        logger.warning("Every collection step ended without a solution")
        code = EXIT_INFEASIBLE

    manifest_name = Path(paths["manifest"]).name
    storage.write_library(lib, paths["library"], manifest_name)
    storage.write_csv(paths["csv"], storage.library_frame(lib))
    manifest = _manifest(
        args,
        case_path=args.case,
        case_sha256=storage.sha256_text(text),
        network_fingerprint=net.fingerprint(),
        artifacts=paths,
        objectives=catalog.manifest(),
        wall_time_s=time.perf_counter() - started,
    )
    storage.write_manifest(manifest, paths["manifest"])
    return code


def cmd_exhaust(args: argparse.Namespace) -> int:
    """Partitioned rejection sampling of the feasible space"""
    net, text = _load_case(args.case)
    cfg = ExhaustiveConfig(
        m=args.m,
        t=args.t,
        partition_cap=args.partition_cap,
        duplicate_tol=args.duplicate_tol,
        perturbation_scale=args.perturbation_scale,
        seed=args.seed,
        n_jobs=args.n_jobs,
        solver=_solver_options(args),
        guard_eps=args.guard_eps,
        exp_clamp=args.exp_clamp,
    )
    out = Path(args.out)
    stem = f"{net.name}_m{cfg.m}_t{cfg.t}"
    paths = {
        "exhaustive_set": str(out / f"{stem}.jsonl"),
        "partition_report": str(out / f"{stem}_partitions.csv"),
        "manifest": str(out / f"{stem}.manifest.json"),
    }

    started = time.perf_counter()
    xe = run_exhaustive(net, cfg, show_progress=not args.quiet)
    storage.write_exhaustive_set(xe, paths["exhaustive_set"], Path(paths["manifest"]).name)
    storage.write_csv(paths["partition_report"], storage.partition_report(xe))
    manifest = _manifest(
        args,
        case_path=args.case,
        case_sha256=storage.sha256_text(text),
        network_fingerprint=net.fingerprint(),
        artifacts=paths,
        wall_time_s=time.perf_counter() - started,
    )
    storage.write_manifest(manifest, paths["manifest"])
    logger.info(f"Feasible partitions: {xe.feasible_fraction:.6f}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    """Distance table and progression curves of libraries against an exhaustive set"""
    norms = _norms(args.norms)
    injection_set = InjectionSet(args.injection_set)
    xe = storage.read_exhaustive_set(args.exhaustive)
    Y = None
    system = args.system
    case_sha = None
    if args.case:
        net, text = _load_case(args.case)
        storage.check_same_network(net.fingerprint(), xe.network_fingerprint, args.exhaustive)
        Y = build_admittance(net)
        system = system or net.name
        case_sha = storage.sha256_text(text)
    if injection_set is InjectionSet.BUS and Y is None:
        logger.error("--injection-set bus needs --case")
        return EXIT_USAGE
    system = system or xe.network_name or Path(args.exhaustive).stem

    out = Path(args.out)
    table = DistanceTable()
    paths: Dict[str, str] = {}
    started = time.perf_counter()
    for library_path in args.library:
        lib = storage.read_library(library_path)
        storage.check_same_network(xe.network_fingerprint, lib.network_fingerprint, library_path)
        objective = lib.objective_id or Path(library_path).stem
        for norm in norms:
            if len(lib) == 0 or len(xe) == 0:
                table.add(objective, system, norm, None)
                continue
            curve = progression(lib, xe, norm, injection_set, Y)
            table.add(objective, system, norm, curve.hausdorff[-1])
            curve_path = out / f"{system}_{objective}_{norm.value}_progression.csv"
            storage.write_csv(curve_path, curve.to_frame())
            paths[f"progression_{objective}_{norm.value}"] = str(curve_path)

    table_path = out / f"{system}_distances.csv"
    storage.write_csv(table_path, table.to_frame())
    paths["distances"] = str(table_path)
    for norm in norms:
        finished = {k: v for k, v in table.slice(system, norm).items() if v is not None}
        if finished:
            best, d_star = pick_best(finished)
            logger.info(f"Best distance ({norm.value}, {injection_set.value} injections) = {d_star:.6g} by {best}")
        else:
            logger.warning(f"No finished library for norm {norm.value}")

    manifest_path = out / f"{system}_compare.manifest.json"
    paths["manifest"] = str(manifest_path)
    manifest = _manifest(
        args,
        case_path=args.case,
        case_sha256=case_sha,
        network_fingerprint=xe.network_fingerprint,
        artifacts=paths,
        wall_time_s=time.perf_counter() - started,
    )
    storage.write_manifest(manifest, manifest_path)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    """Ten-to-one point scoring over one or more distance tables"""
    tables = [
        DistanceTable.from_frame(pd.read_csv(path, dtype={"objective": str, "system": str, "value": str}))
        for path in args.tables
    ]
    scores = score(tables, _norms(args.norms))
    frame = score_frame(scores)
    out = Path(args.out)
    storage.write_csv(out, frame)
    manifest_path = out.with_suffix(".manifest.json")
    storage.write_manifest(
        _manifest(args, artifacts={"scores": str(out), "manifest": str(manifest_path)}),
        manifest_path,
    )
    logger.info("Scores\n" + frame.head(10).to_string(index=False))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "collect": cmd_collect,
    "exhaust": cmd_exhaust,
    "compare": cmd_compare,
    "score": cmd_score,
}


def cmd_replay(args: argparse.Namespace) -> int:
    """Re-run a recorded command with its recorded configuration"""
    manifest = storage.load_manifest(args.manifest)
    if manifest.command not in COMMANDS:
        raise CaseParseError(f"manifest {args.manifest} records unknown command {manifest.command!r}")
    recorded = argparse.Namespace(**manifest.config)
    if manifest.case_sha256 and manifest.case_path:
        current = storage.sha256_file(manifest.case_path)
        if current != manifest.case_sha256:
            raise ArtifactMismatchError(f"{manifest.case_path} changed since the manifest was written")
    logger.info(f"Replaying {manifest.command} from {args.manifest}")
    return COMMANDS[manifest.command](recorded)


def _add_solver_flags(parser: argparse.ArgumentParser, settings: Settings) -> None:
    parser.add_argument("--feasibility-tol", type=float, default=settings.feasibility_tol)
    parser.add_argument("--stationarity-tol", type=float, default=settings.stationarity_tol)
    parser.add_argument("--max-iter", type=int, default=settings.max_iter)
    parser.add_argument("--seed", type=int, default=0, help="Random seed for perturbed warm starts")
    parser.add_argument(
        "--perturbation-scale",
        type=float,
        default=settings.perturbation_scale,
        help="Uniform jitter on every coordinate of warm starts",
    )
    parser.add_argument("--guard-eps", type=float, default=settings.guard_eps, help="Floor inside log transforms")
    parser.add_argument("--exp-clamp", type=float, default=settings.exp_clamp, help="Cap on exp-transform exponents")


def build_parser(settings: Optional[Settings] = None) -> argparse.ArgumentParser:
    settings = settings or get_settings()
    parser = argparse.ArgumentParser(prog="opfx", description="AC-OPF feasible-space exploration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")
    parser.add_argument("--log-level", default=settings.log_level)
    sub = parser.add_subparsers(dest="command", required=True)

    collect = sub.add_parser("collect", help="Sequential data collection with one objective")
    collect.add_argument("--case", required=True, help="MATPOWER case file")
    collect.add_argument("--objective", required=True, help="Catalog id, e.g. f36")
    collect.add_argument("--n", type=int, required=True, help="Target number of points")
    collect.add_argument(
        "--dnf-policy", choices=[p.value for p in DnfPolicy], default=DnfPolicy.SKIP_AND_PERTURB.value
    )
    collect.add_argument("--extra-objectives", help="YAML file of additional objective specs")
    collect.add_argument("--out", default="runs")
    _add_solver_flags(collect, settings)

    exhaust = sub.add_parser("exhaust", help="Partitioned rejection sampling")
    exhaust.add_argument("--case", required=True)
    exhaust.add_argument("--m", type=int, required=True, help="Divisions per generator bus")
    exhaust.add_argument("--t", type=int, required=True, help="Points per feasible partition")
    exhaust.add_argument("--partition-cap", type=int, default=settings.partition_cap)
    exhaust.add_argument("--duplicate-tol", type=float, default=settings.duplicate_tol)
    exhaust.add_argument("--n-jobs", type=int, default=settings.n_jobs)
    exhaust.add_argument("--out", default="runs")
    _add_solver_flags(exhaust, settings)

    compare = sub.add_parser("compare", help="Hausdorff distances and progression curves")
    compare.add_argument("--library", nargs="+", required=True)
    compare.add_argument("--exhaustive", required=True)
    compare.add_argument("--norms", default="PQ,PV", help="Comma list of P,Q,V,Theta,PQ,PV,VTheta")
    compare.add_argument("--injection-set", choices=[s.value for s in InjectionSet], default="generator")
    compare.add_argument("--case", help="Case file; needed for bus injections")
    compare.add_argument("--system", help="System label in the distance table; defaults to the network name")
    compare.add_argument("--out", default="runs")

    score_cmd = sub.add_parser("score", help="Point scoring across systems")
    score_cmd.add_argument("--tables", nargs="+", required=True)
    score_cmd.add_argument("--norms", default="PQ,PV")
    score_cmd.add_argument("--out", default="runs/scores.csv")

    replay = sub.add_parser("replay", help="Re-run a command from its manifest")
    replay.add_argument("--manifest", required=True)

    for name, func in {**COMMANDS, "replay": cmd_replay}.items():
        sub.choices[name].set_defaults(func=func)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except (UnknownObjectiveError, DuplicateObjectiveError, PartitionCapError, ValidationError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (SeedInfeasibleError, SolverAbort) as e:
        logger.error(str(e))
        return EXIT_INFEASIBLE
    except (CaseParseError, CaseReferenceError, SingularBranchError, ArtifactMismatchError, OSError, ValueError) as e:
        logger.error(str(e))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
