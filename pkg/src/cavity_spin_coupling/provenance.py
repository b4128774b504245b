"""Record command runs as an RO-Crate and a reproducibility manifest.

Each run writes into its output directory:

* ``ro-crate-metadata.json``, a Process Run Crate with the configuration and input data
  as inputs and every written artifact as output;
* ``manifest.json`` with the configuration digest, the noise seed and the versions of
  the packages that produced the outputs.
"""

from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import UTC, datetime
from functools import wraps
from pathlib import Path
from shlex import quote
import getpass
import hashlib
import importlib.metadata
import json
import logging
import mimetypes
import os
import pwd
import shutil
import sys

from rocrate.model import File
from rocrate.model.creativework import CreativeWork
from rocrate.model.person import Person
from rocrate.rocrate import Entity, Metadata, ROCrate, SoftwareApplication

from cavity_spin_coupling.__about__ import __version__
from cavity_spin_coupling.config import RunConfig

logger = logging.getLogger(__name__)

DISTRIBUTION = "cavity-spin-coupling"
TRACKED_PACKAGES = (DISTRIBUTION, "numpy", "scipy", "matplotlib", "rocrate")
PROCESS_RUN_PROFILE = "https://w3id.org/ro/wfrun/process/0.5"
WORKFLOW_RUN_CONTEXT = "https://w3id.org/ro/terms/workflow-run/context"
MANIFEST_NAME = "manifest.json"
INPUTS_DIR = "inputs"
EXTRA_MIME_TYPES = {".ini": "text/plain", ".csv": "text/csv", ".svg": "image/svg+xml"}


@dataclass
class Program:
    """The command that produced a run."""

    name: str
    """Name of the program."""
    description: str
    """Description of the program."""
    subcommand: str
    """Subcommand that was run."""
    version: str | None = None
    """Version of the program. Detected from the installed distribution when None."""


@dataclass
class RunArtifact:
    """A file read or written by a run."""

    path: Path
    """Location of the file, inside the crate directory."""
    description: str
    """What the file holds."""


@dataclass
class RunArtifacts:
    """All files involved in a run."""

    inputs: list[RunArtifact] = field(default_factory=list[RunArtifact])
    """Configuration and data files read by the run."""
    outputs: list[RunArtifact] = field(default_factory=list[RunArtifact])
    """Reports, tracks, spectra and plots written by the run."""


def detect_software_version(distribution: str = DISTRIBUTION) -> str:
    """Installed version of a distribution, or of this package when not installed.

    >>> detect_software_version("no-such-distribution-here")
    ''
    """
    try:
        return importlib.metadata.version(distribution)
    except importlib.metadata.PackageNotFoundError:
        return __version__ if distribution == DISTRIBUTION else ""


def package_versions() -> dict[str, str]:
    """Versions of the packages that determine the numbers a run produces."""
    return {name: detect_software_version(name) or "not installed" for name in TRACKED_PACKAGES}


def file_digest(path: Path) -> str:
    """SHA-256 hex digest of a file."""
    with open(path, "rb") as handle:
        return hashlib.file_digest(handle, "sha256").hexdigest()


def make_action_id(argv: list[str] | None = None) -> str:
    """Quoted command line used as the identifier of a recorded run."""
    argv_list = list(argv) if argv is not None else list(sys.argv)
    return " ".join(quote(arg) for arg in argv_list)


def get_relative_path(path: Path, root: Path) -> Path:
    """Path relative to the crate root.

    Raises:
        ValueError: If path is outside the root.
    """
    apath = path.resolve().expanduser().absolute()
    try:
        return apath.relative_to(root)
    except ValueError as exc:
        raise ValueError(
            f"Path '{path}' is outside the crate root '{root}'. Can not create crate with files outside the root."
        ) from exc


def stage_input(path: Path, crate_root: Path) -> Path:
    """Copy an input file into the crate unless it already lives there.

    Returns:
        The path of the file inside the crate.
    """
    path = Path(path).resolve()
    try:
        path.relative_to(crate_root)
        return path
    except ValueError:
        staged = crate_root / INPUTS_DIR / path.name
        staged.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(path, staged)
        logger.debug("Copied input %s into the run crate", path)
        return staged


def write_manifest(config: RunConfig, staged_config: Path, outputs: list[Path]) -> Path:
    """Write ``manifest.json`` next to the run outputs.

    Args:
        config: The configuration of the run.
        staged_config: The copy of the configuration file inside the output directory.
        outputs: Files written by the run.

    Returns:
        Path of the manifest.
    """
    root = config.io.output_dir.resolve()
    manifest: dict[str, object] = {
        "command": str(config.command),
        "config": str(get_relative_path(staged_config, root)),
        "config_sha256": file_digest(staged_config),
        "seed": config.noise.seed,
        "noise_model": config.noise.model,
        "versions": package_versions(),
        "outputs": {
            str(get_relative_path(path, root)): file_digest(path) for path in sorted(outputs)
        },
    }
    if config.io.input is not None:
        manifest["input_sha256"] = file_digest(config.io.input)
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _get_mime_type(path: Path) -> str:
    mime_type, _ = mimetypes.guess_type(str(path))
    return EXTRA_MIME_TYPES.get(path.suffix, mime_type or "application/octet-stream")


def add_file(crate: ROCrate, crate_root: Path, artifact: RunArtifact) -> File:
    """Add or update a File in the crate."""
    path = artifact.path
    identifier = str(get_relative_path(path, crate_root))
    properties = {
        "name": identifier,
        "description": artifact.description,
        "contentSize": path.stat().st_size,
        "encodingFormat": _get_mime_type(path),
    }
    existing = crate.get(identifier)
    if isinstance(existing, File):
        for key, value in properties.items():
            existing[key] = value
        return existing
    file = File(crate, source=path, dest_path=identifier, properties=properties)
    crate.add(file)
    return file


def add_software_application(crate: ROCrate, program: Program) -> SoftwareApplication:
    """Add or get the SoftwareApplication that ran."""
    software_id = f"{program.name}@{program.version}" if program.version else program.name
    software = SoftwareApplication(
        crate,
        software_id,
        properties={
            "name": program.name,
            "description": program.description,
            "version": program.version,
        },
    )
    if not crate.get(software.id):
        crate.add(software)
    return software


def add_agent(crate: ROCrate, current_user: str) -> Person:
    person = Person(crate, current_user, properties={"name": current_user})
    if not crate.get(current_user):
        crate.add(person)
    return person


def conform_to_process_run_crate_profile(crate: ROCrate) -> CreativeWork:
    """Make the crate declare the Process Run Crate profile."""
    profile = CreativeWork(
        crate=crate,
        identifier=PROCESS_RUN_PROFILE,
        properties={"name": "Process Run Crate", "version": "0.5"},
    )
    if not crate.get(profile.id):
        crate.add(profile)
    if (
        "conformsTo" not in crate.root_dataset
        or crate.root_dataset["conformsTo"] != profile
    ):
        crate.root_dataset["conformsTo"] = profile
    if WORKFLOW_RUN_CONTEXT not in crate.metadata.extra_contexts:
        crate.metadata.extra_contexts.append(WORKFLOW_RUN_CONTEXT)
    return profile


def _unique_by_id[T: Entity](entities: list[T]) -> list[T]:
    seen: set[str] = set()
    unique = []
    for entity in entities:
        if entity.id not in seen:
            seen.add(entity.id)
            unique.append(entity)
    return unique


def record_run(
    program: Program,
    artifacts: RunArtifacts,
    start_time: datetime,
    crate_dir: Path,
    argv: list[str] | None = None,
    end_time: datetime | None = None,
    current_user: str | None = None,
    dataset_license: str | None = None,
) -> Path:
    """Record a run in the RO-Crate of its output directory.

    An existing crate is extended, so repeated runs into one directory accumulate.

    Args:
        program: The program and subcommand that ran.
        artifacts: Files read and written, all inside crate_dir.
        start_time: When the run started.
        crate_dir: The output directory of the run.
        argv: Command line. Uses sys.argv when None.
        end_time: When the run ended. Uses the current time when None.
        current_user: Who ran it. Determined from the system when None.
        dataset_license: License of the crate, for example "CC-BY-4.0".

    Returns:
        Path to the written ro-crate-metadata.json.

    Raises:
        ValueError: If an artifact lies outside crate_dir or start_time is after end_time.
    """
    crate_root = Path(crate_dir).resolve().expanduser()
    crate_root.mkdir(parents=True, exist_ok=True)
    end_time = end_time or datetime.now(tz=UTC)
    if start_time > end_time:
        raise ValueError(f"start_time {start_time} is after end_time {end_time}")
    if current_user is None:
        try:
            current_user = pwd.getpwuid(os.getuid()).pw_name
        except (KeyError, OSError, AttributeError):
            current_user = getpass.getuser()
    if not program.version:
        program.version = detect_software_version()
    if not dataset_license:
        logger.warning(
            "No dataset license configured, the run crate will not validate. "
            "Set [run] dataset_license, for example to CC-BY-4.0."
        )

    metadata_file = crate_root / Metadata.BASENAME
    crate = ROCrate(crate_root if metadata_file.exists() else None)
    conform_to_process_run_crate_profile(crate)
    software = add_software_application(crate, program)
    inputs = [add_file(crate, crate_root, a) for a in artifacts.inputs]
    outputs = [add_file(crate, crate_root, a) for a in artifacts.outputs]
    agent = add_agent(crate, current_user)

    action_id = make_action_id(argv)
    if not crate.get(action_id):
        crate.add_action(
            instrument=software,
            identifier=action_id,
            object=_unique_by_id(inputs),
            result=_unique_by_id(outputs),
            properties={
                "name": f"{program.name} {program.subcommand}",
                "startTime": start_time.isoformat(),
                "endTime": end_time.isoformat(),
                "agent": agent,
            },
        )
    if dataset_license:
        crate.license = dataset_license
    crate.datePublished = end_time
    if not crate.name:
        crate.name = f"Runs of {program.name}"
    if not crate.description:
        crate.description = (
            f"An RO-Crate recording the configurations, data and results of {program.name} runs."
        )
    crate.metadata.write(crate_root)
    return metadata_file


def playback(crate_root: Path) -> str:
    """Recorded command lines of a crate, oldest first, one per line.

    Returns an empty string when the directory holds no crate.
    """
    if not (Path(crate_root) / Metadata.BASENAME).exists():
        return ""
    crate = ROCrate(crate_root)
    actions = []
    for action in crate.get_by_type("CreateAction"):
        end_time = action.properties().get("endTime", "")
        if action.id and end_time:
            actions.append((end_time, action.id))
    actions.sort()
    return "\n".join(action_id for _, action_id in actions)


@dataclass
class RunOutcome:
    """What a command produced."""

    exit_code: int
    outputs: list[Path] = field(default_factory=list[Path])
    """Files written into the output directory."""
    summary: str = ""
    """Human-readable report of the run."""


def recorded(
    program: Program, argv: list[str] | None = None
) -> Callable[[Callable[[RunConfig], RunOutcome]], Callable[[RunConfig], RunOutcome]]:
    """Decorator that records a command run after it returns.

    The configuration and any input data file are copied into the output directory, the
    manifest is written and the run is added to the crate there. Runs that raise are not
    recorded.
    """

    def decorator(func: Callable[[RunConfig], RunOutcome]) -> Callable[[RunConfig], RunOutcome]:
        @wraps(func)
        def wrapper(config: RunConfig) -> RunOutcome:
            start_time = datetime.now(tz=UTC)
            outcome = func(config)
            root = config.io.output_dir.resolve()
            root.mkdir(parents=True, exist_ok=True)
            staged_config = stage_input(config.source, root)
            inputs = [RunArtifact(staged_config, "Run configuration")]
            if config.io.input is not None:
                inputs.append(RunArtifact(stage_input(config.io.input, root), "Input data"))
            manifest = write_manifest(config, staged_config, outcome.outputs)
            outputs = [RunArtifact(path.resolve(), _describe(path)) for path in outcome.outputs]
            outputs.append(RunArtifact(manifest, "Reproducibility manifest"))
            record_run(
                program=program,
                artifacts=RunArtifacts(inputs=inputs, outputs=outputs),
                start_time=start_time,
                crate_dir=root,
                argv=argv,
                dataset_license=config.dataset_license,
            )
            outcome.outputs.append(manifest)
            return outcome

        return wrapper

    return decorator


def _describe(path: Path) -> str:
    if path.name == "truth.json":
        return "Generating parameters of a synthetic spectrum"
    match path.suffix:
        case ".svg":
            return "Plot"
        case ".csv":
            return "Data table"
        case ".txt":
            return "Report"
        case ".json":
            return "Machine-readable report"
        case _:
            return "Output"
