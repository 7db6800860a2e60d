"""
Artifact storage: JSON-lines records, CSV tables and run manifests
"""
import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field

from opfx import __version__
from opfx.config import get_settings
from opfx.errors import ArtifactMismatchError
from opfx.models.library import DnfEvent, LibraryEntry, SolutionLibrary
from opfx.sampling.exhaustive_sampler import ExhaustivePoint, ExhaustiveSet, PartitionRecord

PathLike = Union[str, Path]


def _atomic_write(path: PathLike, write) -> Path:
    """Write through a temp file in the target directory, then rename over ``path``"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_text(path: PathLike, text: str) -> Path:
    return _atomic_write(path, lambda fh: fh.write(text))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> Path:
    def write(fh):
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")

    return _atomic_write(path, write)


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: PathLike, df: pd.DataFrame) -> Path:
    return _atomic_write(path, lambda fh: df.to_csv(fh, index=False, float_format="%.17g"))


# -- solution libraries ---------------------------------------------------------

def write_library(lib: SolutionLibrary, path: PathLike, manifest_name: Optional[str] = None) -> Path:
    """
    Persist a library as JSON-lines

    Line 1 is a header; then one line per entry (point + provenance); then one line per DNF event.
    """
    header = {
        "kind": "header",
        "network_fingerprint": lib.network_fingerprint,
        "network_name": lib.network_name,
        "n_bus": lib.n_bus,
        "n_gen": lib.n_gen,
        "objective_id": lib.objective_id,
        "manifest": manifest_name,
    }
    records = [header]
    records += [{"kind": "entry", **entry.model_dump(mode="json")} for entry in lib.entries]
    records += [{"kind": "dnf", **event.model_dump(mode="json")} for event in lib.dnf_events]
    path = write_jsonl(path, records)
    logger.info(f"Wrote library with {len(lib)} points to {path}")
    return path


def read_library(path: PathLike) -> SolutionLibrary:
    records = read_jsonl(path)
    if not records or records[0].get("kind") != "header":
        raise ValueError(f"{path} is not a solution library file")
    header = records[0]
    entries, events = [], []
    for record in records[1:]:
        kind = record.pop("kind", None)
        if kind == "entry":
            entries.append(LibraryEntry(**record))
        elif kind == "dnf":
            events.append(DnfEvent(**record))
    return SolutionLibrary(
        network_fingerprint=header["network_fingerprint"],
        network_name=header.get("network_name", ""),
        n_bus=header["n_bus"],
        n_gen=header["n_gen"],
        objective_id=header.get("objective_id"),
        entries=entries,
        dnf_events=events,
    )


def library_frame(lib: SolutionLibrary) -> pd.DataFrame:
    """Flat columns v*, theta*, pg*, qg* plus provenance"""
    columns = (
        [f"v{i}" for i in range(lib.n_bus)]
        + [f"theta{i}" for i in range(lib.n_bus)]
        + [f"pg{i}" for i in range(lib.n_gen)]
        + [f"qg{i}" for i in range(lib.n_gen)]
    )
    df = pd.DataFrame(lib.matrix(), columns=columns)
    df.insert(0, "iteration", [e.provenance.iteration for e in lib.entries])
    df.insert(1, "objective_id", [e.provenance.objective_id for e in lib.entries])
    df["objective_value"] = [e.provenance.objective_value for e in lib.entries]
    return df


# -- exhaustive sets ----------------------------------------------------------------

def write_exhaustive_set(xe: ExhaustiveSet, path: PathLike, manifest_name: Optional[str] = None) -> Path:
    """Header line, one line per partition record, then one line per point"""
    header = {
        "kind": "header",
        "network_fingerprint": xe.network_fingerprint,
        "network_name": xe.network_name,
        "n_bus": xe.n_bus,
        "n_gen": xe.n_gen,
        "m": xe.m,
        "t": xe.t,
        "manifest": manifest_name,
    }
    records = [header]
    records += [{"kind": "partition", **r.model_dump(mode="json")} for r in xe.partitions]
    records += [{"kind": "point", **p.model_dump(mode="json")} for p in xe.points]
    path = write_jsonl(path, records)
    logger.info(f"Wrote exhaustive set with {len(xe)} points to {path}")
    return path


def read_exhaustive_set(path: PathLike) -> ExhaustiveSet:
    records = read_jsonl(path)
    if not records or records[0].get("kind") != "header":
        raise ValueError(f"{path} is not an exhaustive set file")
    header = records[0]
    partitions, points = [], []
    for record in records[1:]:
        kind = record.pop("kind", None)
        if kind == "partition":
            partitions.append(PartitionRecord(**record))
        elif kind == "point":
            points.append(ExhaustivePoint(**record))
    return ExhaustiveSet(
        network_fingerprint=header["network_fingerprint"],
        network_name=header.get("network_name", ""),
        n_bus=header["n_bus"],
        n_gen=header["n_gen"],
        m=header["m"],
        t=header["t"],
        points=points,
        partitions=partitions,
    )


def partition_report(xe: ExhaustiveSet) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "index": [r.index for r in xe.partitions],
            "digits": ["-".join(str(d) for d in r.digits) for r in xe.partitions],
            "status": [r.probe_status for r in xe.partitions],
            "feasible": [r.feasible for r in xe.partitions],
            "points": [r.points for r in xe.partitions],
            "solve_time": [r.solve_time for r in xe.partitions],
        }
    )


def check_same_network(expected: str, actual: str, what: str) -> None:
    if expected != actual:
        raise ArtifactMismatchError(
            f"{what} was produced for network {actual[:12]}, expected {expected[:12]}"
        )


# -- run manifests ----------------------------------------------------------------

class RunManifest(BaseModel):
    command: str
    case_path: Optional[str] = None
    case_sha256: Optional[str] = None
    network_fingerprint: Optional[str] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    objectives: List[Dict[str, Any]] = Field(default_factory=list)
    tool_version: str = __version__
    wall_time_s: Optional[float] = None

    def digest(self) -> str:
        """Hash of everything that determines the artifacts"""
        payload = self.model_dump(mode="json", exclude={"wall_time_s"})
        return sha256_text(json.dumps(payload, sort_keys=True))


def write_manifest(manifest: RunManifest, path: PathLike, cache_dir: Optional[PathLike] = None) -> Path:
    """Write the manifest next to its artifacts and copy it into the manifest cache"""
    text = manifest.model_dump_json(indent=2)
    path = write_text(path, text)
    cache_root = Path(cache_dir) if cache_dir is not None else get_settings().cache_dir
    cached = cache_root / "manifests" / f"{manifest.digest()}.json"
    try:
        cached.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(path, cached)
    except OSError as e:
        logger.warning(f"Could not cache manifest in {cached.parent}: {e}")
    logger.info(f"Manifest written to {path}")
    return path


def load_manifest(path: PathLike) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return RunManifest.model_validate_json(fh.read())
