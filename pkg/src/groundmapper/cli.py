"""Operator entry points.

Exit codes are a stable contract: 0 success, 2 usage or input error,
3 environment or network error.
"""

from __future__ import annotations

import dataclasses
import json
import socket
from pathlib import Path
from typing import Dict, Optional

import click

from .client import WorkspaceClient
from .config import AppConfig, maybe_load_config
from .errors import (
    ConfigError,
    MappingError,
    NetworkError,
    ServiceError,
    Unauthenticated,
)
from .metrics import evaluate_export, evaluate_results, report_csv
from .pipeline import CaptureResult, process_session
from .service import ServiceConfig, create_app
from .session import Session, read_session, write_session
from .stabilize import FeatureClass
from .synth import NoiseSpec, build_session, builtin_scene, scene_from_mapping
from .vetting import (
    ClassVerdict,
    Verdict,
    VettingRecord,
    apply_vetting,
    default_record,
)


class EnvironmentFailure(click.ClickException):
    exit_code = 3


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="gm.toml with pipeline and server defaults (default: ./gm.toml if present)",
)
@click.pass_context
def main(ctx: click.Context, config_path: Optional[Path]) -> None:
    """Sidewalk mapping toolkit: generate, replay, eval, serve."""
    try:
        ctx.obj = maybe_load_config(config_path)
    except ConfigError as exc:
        raise click.UsageError(str(exc))


# --- generate --------------------------------------------------------------

@main.command()
@click.option("--scene", "scene_ref", required=True, help="builtin scene name or JSON file")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gps-noise", type=float, default=0.0, help="RMS horizontal GPS error, meters")
@click.option("--depth-noise", type=float, default=0.0, help="additive depth sigma, meters")
def generate(scene_ref: str, out_dir: Path, seed: int, gps_noise: float, depth_noise: float) -> None:
    """Render a synthetic session with known ground truth."""
    scene = _load_scene(scene_ref)
    try:
        noise = NoiseSpec(gps_sigma_m=gps_noise, depth_sigma_m=depth_noise, seed=seed)
        # deterministic id so identical invocations produce identical bytes
        session = build_session(scene, noise, session_id=f"{scene.name}-seed{seed}")
    except (ValueError, MappingError) as exc:
        raise click.UsageError(str(exc))
    write_session(session, out_dir)
    click.echo(
        f"wrote {len(session.capture_indices)} captures "
        f"({len(session.frames)} frames) to {out_dir}"
    )


def _load_scene(ref: str):
    path = Path(ref)
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise click.UsageError(f"cannot read scene file: {exc}")
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"{path}: not valid JSON ({exc})")
        try:
            return scene_from_mapping(data)
        except (ValueError, MappingError) as exc:
            raise click.UsageError(f"{path}: {exc}")
    try:
        return builtin_scene(ref)
    except ValueError as exc:
        raise click.UsageError(str(exc))


# --- replay ----------------------------------------------------------------

@main.command()
@click.option(
    "--session",
    "session_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option("--server", default=None, help="service base URL (required unless --dry-run)")
@click.option("--classes", "classes_csv", default=None, help="comma-separated class names to process")
@click.option("--auto-vet", "mode", flag_value="auto", default=True, help="accept everything (default)")
@click.option("--vet-file", type=click.Path(path_type=Path), default=None, help="JSON vetting records")
@click.option("--interactive", "mode", flag_value="interactive", help="prompt for verdicts")
@click.option("--review", "mode", flag_value="review", help="enqueue captures for the review UI")
@click.option("--dry-run", is_flag=True, help="process only; no network calls")
@click.option("--workspace", default=None)
@click.option("--user", default=None)
@click.option("--secret", default=None)
@click.pass_obj
def replay(
    cfg: AppConfig,
    session_dir: Path,
    server: Optional[str],
    classes_csv: Optional[str],
    mode: str,
    vet_file: Optional[Path],
    dry_run: bool,
    workspace: Optional[str],
    user: Optional[str],
    secret: Optional[str],
) -> None:
    """Process a recorded session and upload the vetted results."""
    if vet_file is not None:
        if mode != "auto":
            raise click.UsageError("--vet-file cannot be combined with --interactive or --review")
        mode = "file"

    try:
        session = read_session(session_dir)
    except MappingError as exc:
        raise click.UsageError(str(exc))
    if classes_csv:
        try:
            session = dataclasses.replace(session, class_selection=_parse_classes(classes_csv))
        except MappingError as exc:
            raise click.UsageError(str(exc))

    results = process_session(session, cfg.pipeline)
    detected = sum(len(r.all_instances()) for r in results)
    issues = sum(len(r.issues) for r in results)
    widths = sum(1 for r in results if r.sidewalk is not None)

    click.echo(f"captures processed: {len(results)}")
    click.echo(f"instances localized: {detected}")
    click.echo(f"sidewalk measurements: {widths}")
    click.echo(f"issues: {issues}")

    if mode == "review":
        if dry_run:
            click.echo("dry run: nothing enqueued")
            return
        client = _client(cfg, server, workspace, user, secret)
        docs = [_capture_doc(session, r) for r in results]
        with client:
            changeset = _network(lambda: client.open_changeset())
            queued = _network(lambda: client.enqueue_review(changeset, docs))
        click.echo(f"enqueued {queued} captures into changeset {changeset} for review")
        return

    vetted = []
    file_records = _load_vet_file(vet_file) if mode == "file" else {}
    for result in results:
        if mode == "interactive":
            record = _interactive_record(result)
        else:
            # vet-file mode falls back to agree-all for unlisted captures
            record = file_records.get(str(result.capture_id)) or default_record(
                str(result.capture_id), result.instances
            )
        try:
            vetted.append(apply_vetting(result.instances, record))
        except MappingError as exc:
            raise click.UsageError(f"capture {result.capture_id}: {exc}")

    accepted = sum(len(v.accepted) for v in vetted)
    click.echo(f"instances accepted: {accepted}")

    if dry_run:
        click.echo("dry run: nothing uploaded")
        return

    client = _client(cfg, server, workspace, user, secret)
    uploaded = 0
    with client:
        changeset = _network(lambda: client.open_changeset())
        for result, vet in zip(results, vetted):
            uploaded += _upload_capture(client, session, changeset, result, vet)
        way_id = _network(lambda: client.close_changeset(changeset))
    click.echo(f"nodes uploaded: {uploaded}")
    click.echo(f"changeset {changeset} closed, way: {way_id if way_id is not None else 'none'}")


def _parse_classes(csv: str) -> frozenset:
    classes = set()
    for token in csv.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            cls = FeatureClass.from_wire(token)
        except ValueError as exc:
            raise click.UsageError(str(exc))
        if cls is FeatureClass.BACKGROUND:
            raise click.UsageError("background is not a mappable class")
        classes.add(cls)
    if not classes:
        raise click.UsageError("--classes named no classes")
    return frozenset(classes)


def _client(
    cfg: AppConfig,
    server: Optional[str],
    workspace: Optional[str],
    user: Optional[str],
    secret: Optional[str],
) -> WorkspaceClient:
    url = server or cfg.server.url
    if url is None:
        raise click.UsageError("--server is required unless --dry-run")
    return WorkspaceClient(
        url,
        user_id=user or cfg.server.user,
        secret=secret or cfg.server.secret,
        workspace=workspace or cfg.server.workspace,
    )


def _network(call):
    """Run a client call, translating failures into exit codes."""
    try:
        return call()
    except NetworkError as exc:
        raise EnvironmentFailure(str(exc))
    except Unauthenticated as exc:
        raise click.UsageError(f"authentication failed: {exc}")
    except ServiceError as exc:
        raise EnvironmentFailure(str(exc))


def _upload_capture(
    client: WorkspaceClient,
    session: Session,
    changeset: int,
    result: CaptureResult,
    vet,
) -> int:
    timestamp = session.frame_by_id(result.capture_id).timestamp
    missing = ",".join(sorted(cls.wire_name for cls in vet.missing_flags))
    has_sidewalk = result.sidewalk is not None
    count = 0
    for inst in vet.accepted:
        tags: Dict[str, object] = {
            "capture_id": result.capture_id,
            "instance_id": inst.instance_id,
        }
        if missing and not has_sidewalk:
            tags["missing_classes"] = missing
        _network(
            lambda: client.upload_node(
                changeset,
                inst.geolocation,
                inst.feature_class,
                tags=tags,
                timestamp=timestamp,
                capture_key=(
                    f"replay:{session.session_id}:{result.capture_id}:"
                    f"{inst.feature_class.wire_name}:{inst.instance_id}"
                ),
            )
        )
        count += 1
    if has_sidewalk:
        tags = {"capture_id": result.capture_id}
        if vet.width_accepted:
            tags["width"] = round(result.sidewalk.width_m, 2)
        if missing:
            tags["missing_classes"] = missing
        _network(
            lambda: client.upload_node(
                changeset,
                result.sidewalk.location,
                FeatureClass.SIDEWALK,
                tags=tags,
                timestamp=timestamp,
                capture_key=f"replay:{session.session_id}:{result.capture_id}:sidewalk",
            )
        )
        count += 1
    return count


def _load_vet_file(path: Path) -> Dict[str, VettingRecord]:
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise click.UsageError(f"cannot read vet file: {exc}")
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"{path}: not valid JSON ({exc})")
    if isinstance(data, dict):
        data = data.get("records")
    if not isinstance(data, list):
        raise click.UsageError(f"{path}: expected a list of records or {{'records': [...]}}")
    records = {}
    for entry in data:
        try:
            record = VettingRecord.from_payload(entry)
        except (MappingError, ValueError, KeyError, TypeError, AttributeError) as exc:
            raise click.UsageError(f"{path}: bad vetting record ({exc})")
        records[record.capture_id] = record
    return records


def _interactive_record(result: CaptureResult) -> VettingRecord:
    verdicts = {}
    for cls in sorted(result.instances, key=int):
        count = len(result.instances[cls])
        choice = click.prompt(
            f"capture {result.capture_id}: {cls.wire_name} x{count} "
            "[a]gree/[d]iscard/[m]issing",
            type=click.Choice(["a", "d", "m"]),
            default="a",
        )
        verdict = {"a": Verdict.AGREE, "d": Verdict.DISCARD, "m": Verdict.MISSING}[choice]
        rejected = frozenset()
        if verdict is Verdict.AGREE and count > 0:
            raw = click.prompt(
                "  reject instance indices (comma separated)", default="", show_default=False
            )
            if raw.strip():
                try:
                    rejected = frozenset(int(tok) for tok in raw.split(","))
                except ValueError:
                    raise click.UsageError(f"bad instance index list {raw!r}")
        verdicts[cls] = ClassVerdict(feature_class=cls, verdict=verdict, rejected_instances=rejected)
    width_ok = True
    if result.sidewalk is not None:
        width_ok = click.confirm(
            f"capture {result.capture_id}: sidewalk width "
            f"{result.sidewalk.width_m:.2f} m ok?",
            default=True,
        )
    return VettingRecord(
        capture_id=str(result.capture_id),
        verdicts=verdicts,
        width_accepted=width_ok,
        completed=True,
    )


def _capture_doc(session: Session, result: CaptureResult) -> dict:
    """Shape one capture for the review queue: contours and points, no rasters."""
    frame = session.frame_by_id(result.capture_id)
    instances = []
    for inst in result.all_instances():
        instances.append(
            {
                "instance_id": inst.instance_id,
                "class": inst.feature_class.wire_name,
                "polygon": [[int(r), int(c)] for r, c in inst.contour.points],
                "centroid": [float(inst.centroid_px[0]), float(inst.centroid_px[1])],
                "location": {
                    "latitude": inst.geolocation.latitude,
                    "longitude": inst.geolocation.longitude,
                },
            }
        )
    doc = {
        "capture_id": result.capture_id,
        "timestamp": frame.timestamp,
        "instances": instances,
        "sidewalk": None,
    }
    if result.sidewalk is not None:
        sidewalk = {
            "width_m": result.sidewalk.width_m,
            "location": {
                "latitude": result.sidewalk.location.latitude,
                "longitude": result.sidewalk.location.longitude,
            },
            "trapezoid": None,
        }
        if result.trapezoid is not None:
            t = result.trapezoid
            sidewalk["trapezoid"] = {
                "top_row": t.top_row,
                "bottom_row": t.bottom_row,
                "top_span": [t.top_span[0], t.top_span[1]],
                "bottom_span": [t.bottom_span[0], t.bottom_span[1]],
            }
        doc["sidewalk"] = sidewalk
    return doc


# --- eval ------------------------------------------------------------------

@main.command("eval")
@click.option(
    "--session",
    "session_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--pred",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="exported GeoJSON to grade; omit to run the pipeline in-process",
)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.pass_obj
def eval_command(cfg: AppConfig, session_dir: Path, pred: Optional[Path], out_path: Path) -> None:
    """Grade predictions against a session's ground truth."""
    try:
        session = read_session(session_dir)
    except MappingError as exc:
        raise click.UsageError(str(exc))
    if session.ground_truth is None:
        raise click.UsageError(f"{session_dir}: session has no ground truth")
    try:
        if pred is not None:
            report = evaluate_export(pred.read_text(), session)
        else:
            report = evaluate_results(process_session(session, cfg.pipeline), session)
    except MappingError as exc:
        raise click.UsageError(str(exc))
    text = report_csv(report)
    out_path.write_text(text)
    click.echo(text.rstrip("\n"))
    click.echo(f"wrote {out_path}")


# --- serve -----------------------------------------------------------------

@main.command()
@click.option("--listen", default=None, help="host:port (default from config)")
@click.option(
    "--ui-dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="static review UI bundle to serve at /",
)
@click.option(
    "--workspace-dir",
    type=click.Path(path_type=Path),
    default=None,
    envvar="GM_WORKSPACE_DIR",
    help="event log directory; omit for in-memory only",
)
@click.pass_obj
def serve(cfg: AppConfig, listen: Optional[str], ui_dir: Optional[Path], workspace_dir: Optional[Path]) -> None:
    """Run the workspace service (and the review UI when --ui-dir is given)."""
    import uvicorn

    host, port = _parse_listen(listen or cfg.server.listen)
    service = ServiceConfig(
        users={cfg.server.user: cfg.server.secret},
        storage_dir=workspace_dir,
    )
    try:
        app = create_app(service, ui_dir=ui_dir)
    except MappingError as exc:  # corrupt event log
        raise click.UsageError(str(exc))

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise EnvironmentFailure(f"cannot bind {host}:{port}: {exc}")
    click.echo(f"listening on {host}:{port}")
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])


def _parse_listen(listen: str) -> tuple:
    host, sep, port_text = listen.rpartition(":")
    if not sep or not host:
        raise click.UsageError(f"--listen wants host:port, got {listen!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise click.UsageError(f"--listen port is not a number: {port_text!r}")
    return host, port


if __name__ == "__main__":
    main()
