"""Command line front end.

The CLI is a thin client over the HTTP job API: it assembles a JobConfig,
submits it, polls until the job finishes and writes the resulting PNG.
By default the service runs in-process; --server points the same client
at a remote instance instead.  Image files are always read locally and
sent as base64 data, so a job built here runs identically against either
transport.

A job can also be described in a JSON file (--job) using the same schema
the API accepts.  Flags fill in fields the file leaves unset; where both
specify a field, the file wins and the CLI warns about the ignored flag.
Paths inside a job file are resolved relative to the file's directory.

Exit codes: 0 success, 1 usage or configuration errors, 2 missing or
unreadable input files, 3 numeric or other runtime failures.
"""

from __future__ import annotations

import argparse
import asyncio
import base64
import json
import sys
from pathlib import Path
from typing import Any

import httpx
from pydantic import ValidationError

from . import __version__
from .schemas import JobConfig
from .weights_io import inspect_weight_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_RUNTIME = 3

_USAGE_ERRORS = {"ConfigurationError", "UnknownLayerError", "ValidationError", "ValueError"}
_INPUT_ERRORS = {
    "FileNotFoundError",
    "IsADirectoryError",
    "PermissionError",
    "ImageFileError",
    "WeightFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "LayerShapeError",
    "ChecksumError",
}


class CliError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def exit_code_for(error_type: str) -> int:
    if error_type in _USAGE_ERRORS:
        return EXIT_USAGE
    if error_type in _INPUT_ERRORS:
        return EXIT_INPUT
    return EXIT_RUNTIME


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we reserve 2 for file
    problems, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_key_value(text: str, what: str, value_type=str) -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise CliError(f"{what} must look like NAME=VALUE, got {text!r}", EXIT_USAGE)
    try:
        return key, value_type(value)
    except ValueError as exc:
        raise CliError(f"bad {what} value {value!r}: {exc}", EXIT_USAGE) from exc


def _parse_style_mask(text: str) -> tuple[int, str, str]:
    """A style mask flag is [STYLE:]REGION=PATH with STYLE a 0-based
    index into the --style list (default 0)."""
    head, sep, path = text.partition("=")
    if not sep or not head:
        raise CliError(f"--style-mask must look like [STYLE:]REGION=PATH, got {text!r}", EXIT_USAGE)
    index_text, sep2, region = head.partition(":")
    if sep2:
        try:
            index = int(index_text)
        except ValueError as exc:
            raise CliError(f"bad style index in --style-mask {text!r}", EXIT_USAGE) from exc
    else:
        index, region = 0, head
    return index, region, path


def _comma_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _set_path(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _image_ref(path: str) -> dict:
    return {"path": str(path)}


def build_flag_tree(args: argparse.Namespace) -> dict:
    """Collect explicitly-given flags into a JobConfig-shaped dict."""
    tree: dict = {"mode": args.mode}
    simple = [
        ("model", "model_path", str),
        ("pooling", "pooling", str),
        ("seed", "settings.seed", int),
        ("init", "settings.init", str),
        ("content_weight", "settings.content_weight", float),
        ("style_weight", "settings.style_weight", float),
        ("guidance", "settings.guidance_mode", str),
        ("method", "settings.spatial_method", str),
        ("iterations", "optimizer.max_iterations", int),
        ("budget", "highres.budget_pixels", int),
        ("refine_fraction", "highres.refinement_fraction", float),
        ("refine_iterations", "highres.refinement_iterations", int),
        ("prematch", "color.prematch", str),
        ("color_mode", "color.mode", str),
        ("match_method", "color.method", str),
    ]
    for attr, dotted, cast in simple:
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(tree, dotted, cast(value))

    if getattr(args, "content", None) is not None:
        tree["content"] = _image_ref(args.content)
    if getattr(args, "init_image", None) is not None:
        _set_path(tree, "settings.init_image", _image_ref(args.init_image))
    if getattr(args, "content_layers", None) is not None:
        _set_path(tree, "settings.content_layers", _comma_list(args.content_layers))
    if getattr(args, "style_layers", None) is not None:
        _set_path(tree, "settings.style_layers", _comma_list(args.style_layers))
    if getattr(args, "global_channel", None) is not None:
        value = {"auto": None, "on": True, "off": False}[args.global_channel]
        _set_path(tree, "settings.add_global_channel", value)
    if getattr(args, "style_layer_weight", None):
        weights = dict(
            _parse_key_value(t, "--style-layer-weight", float) for t in args.style_layer_weight
        )
        _set_path(tree, "settings.style_layer_weights", weights)
    if getattr(args, "region_weight", None):
        weights = dict(_parse_key_value(t, "--region-weight", float) for t in args.region_weight)
        _set_path(tree, "settings.region_weights", weights)

    styles = [{"image": _image_ref(p), "masks": {}} for p in (getattr(args, "style", None) or [])]
    for text in getattr(args, "style_mask", None) or []:
        index, region, path = _parse_style_mask(text)
        if not 0 <= index < len(styles):
            raise CliError(
                f"--style-mask {text!r} names style {index} but only "
                f"{len(styles)} --style flags were given",
                EXIT_USAGE,
            )
        styles[index]["masks"][region] = _image_ref(path)
    if styles:
        tree["styles"] = styles
    if getattr(args, "content_mask", None):
        masks = {}
        for text in args.content_mask:
            region, path = _parse_key_value(text, "--content-mask")
            masks[region] = _image_ref(path)
        tree["content_masks"] = masks

    if getattr(args, "fine", None) is not None:
        _set_path(tree, "mix.fine", _image_ref(args.fine))
    if getattr(args, "coarse", None) is not None:
        _set_path(tree, "mix.coarse", _image_ref(args.coarse))
    if getattr(args, "fine_layers", None) is not None:
        _set_path(tree, "mix.fine_layers", _comma_list(args.fine_layers))
    return tree


def _resolve_job_file_paths(node, base: Path):
    """Rewrite every {'path': ...} image reference relative to the job
    file's directory, and the model_path alongside them."""
    if isinstance(node, dict):
        for key, value in node.items():
            if key == "path" and isinstance(value, str):
                node[key] = str((base / value).resolve()) if not Path(value).is_absolute() else value
            elif key == "model_path" and isinstance(value, str):
                node[key] = str((base / value).resolve()) if not Path(value).is_absolute() else value
            else:
                _resolve_job_file_paths(value, base)
    elif isinstance(node, list):
        for item in node:
            _resolve_job_file_paths(item, base)


def load_job_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"could not read job file {path}: {exc}", EXIT_INPUT) from exc
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"job file {path} is not valid JSON: {exc}", EXIT_USAGE) from exc
    if not isinstance(tree, dict):
        raise CliError(f"job file {path} must hold a JSON object", EXIT_USAGE)
    _resolve_job_file_paths(tree, Path(path).resolve().parent)
    return tree


def merge_trees(job_tree: dict, flag_tree: dict, prefix: str = "") -> list[str]:
    """Fill job_tree with flag values it lacks.  Returns the dotted paths
    of flag values dropped because the job file already sets them."""
    dropped: list[str] = []
    for key, flag_value in flag_tree.items():
        dotted = f"{prefix}{key}"
        if key not in job_tree:
            job_tree[key] = flag_value
        elif isinstance(job_tree[key], dict) and isinstance(flag_value, dict):
            dropped.extend(merge_trees(job_tree[key], flag_value, f"{dotted}."))
        elif job_tree[key] != flag_value:
            dropped.append(dotted)
    return dropped


def _inline_images(node) -> None:
    """Replace every path image reference with base64 data read locally,
    so the job runs the same against an in-process or remote server."""
    if isinstance(node, dict):
        if "path" in node and isinstance(node["path"], str) and len(node) <= 2:
            path = node["path"]
            try:
                raw = Path(path).read_bytes()
            except FileNotFoundError:
                raise CliError(f"input file not found: {path}", EXIT_INPUT) from None
            except OSError as exc:
                raise CliError(f"could not read input file {path}: {exc}", EXIT_INPUT) from exc
            node.clear()
            node["data"] = base64.b64encode(raw).decode("ascii")
            return
        for value in node.values():
            _inline_images(value)
    elif isinstance(node, list):
        for item in node:
            _inline_images(item)


def build_job(args: argparse.Namespace) -> JobConfig:
    flag_tree = build_flag_tree(args)
    if args.job:
        tree = load_job_file(args.job)
        dropped = merge_trees(tree, flag_tree)
        for dotted in dropped:
            print(f"warning: ignoring flag value for {dotted}; the job file wins", file=sys.stderr)
    else:
        tree = flag_tree
    model_path = tree.pop("model_path", None)
    pooling = tree.pop("pooling", None)
    _inline_images(tree)
    if model_path is not None:
        tree["model_path"] = str(Path(model_path).resolve())
    if pooling is not None:
        tree["pooling"] = pooling
    try:
        return JobConfig.model_validate(tree)
    except ValidationError as exc:
        raise CliError(f"invalid job: {exc}", EXIT_USAGE) from exc


def _print_settings(settings: dict, indent: str = "  ") -> None:
    for key in sorted(settings):
        print(f"{indent}{key} = {json.dumps(settings[key], sort_keys=True)}")


def _report_lines(status: dict) -> list[dict]:
    """All run reports of a finished job, in execution order."""
    reports = []
    if status.get("mix_report"):
        reports.append(status["mix_report"])
    if status.get("stages"):
        reports.extend(stage["report"] for stage in status["stages"])
    elif status.get("report"):
        reports.append(status["report"])
    return reports


def _write_telemetry(path: str, reports: list[dict]) -> None:
    with open(path, "w") as fh:
        for report in reports:
            for it in report["iterations"]:
                line = {
                    "iter": it["iter"],
                    "total": it["total"],
                    "terms": it["terms"],
                    "step": it["step"],
                }
                fh.write(json.dumps(line) + "\n")


def _summarise(status: dict) -> None:
    for report in _report_lines(status):
        settings = report["settings"]
        mode = settings.get("mode", "?")
        print(f"run: mode={mode}")
        _print_settings(settings)
        iterations = report["iterations"]
        print(f"  steps = {max(0, len(iterations) - 1)} ({report['termination']})")
        if iterations:
            print(f"  initial loss = {iterations[0]['total']:.6g}")
            print(f"  final loss = {iterations[-1]['total']:.6g}")
        print(f"  wall time = {report['wall_time_s']:.2f}s")


async def _run_remote(args: argparse.Namespace, job: JobConfig) -> int:
    if args.server:
        transport = None
        base_url = args.server.rstrip("/")
    else:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        base_url = "http://styleforge.local"
    async with httpx.AsyncClient(
        transport=transport, base_url=base_url, timeout=httpx.Timeout(30.0)
    ) as client:
        resp = await client.post("/jobs", json=job.model_dump(mode="json"))
        if resp.status_code not in (200, 202):
            detail = resp.json().get("detail", resp.text)
            raise CliError(f"job rejected: {detail}", EXIT_USAGE)
        job_id = resp.json()["job_id"]
        print(f"job {job_id} submitted")

        delay = 0.05
        while True:
            status = (await client.get(f"/jobs/{job_id}")).json()
            if status["state"] in ("done", "failed"):
                break
            await asyncio.sleep(delay)
            delay = min(delay * 1.5, 1.0)

        if status["state"] == "failed":
            error = status["error"] or {"type": "RuntimeError", "message": "job failed"}
            print(f"error ({error['type']}): {error['message']}", file=sys.stderr)
            return exit_code_for(error["type"])

        _summarise(status)
        if args.telemetry:
            _write_telemetry(args.telemetry, _report_lines(status))
            print(f"telemetry written to {args.telemetry}")

        result = await client.get(f"/jobs/{job_id}/result")
        result.raise_for_status()
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(result.content)
        print(f"result written to {args.out}")

        if getattr(args, "mixed_out", None):
            mixed = await client.get(f"/jobs/{job_id}/mixed-style")
            mixed.raise_for_status()
            Path(args.mixed_out).write_bytes(mixed.content)
            print(f"mixed style written to {args.mixed_out}")
    return EXIT_OK


def run_inspect(args: argparse.Namespace) -> int:
    report = inspect_weight_file(args.weights)
    print(f"weight file: {args.weights}")
    print(f"  format version = {report.version}")
    print(f"  channel order = {report.channel_order}")
    print(f"  channel means = {[round(m, 3) for m in report.channel_means]}")
    print(f"  entries = {len(report.entries)}")
    for entry in report.entries:
        shape = "x".join(str(d) for d in entry.shape)
        note = "" if entry.shape_ok else "  (unexpected shape)"
        print(f"    {entry.name}: {shape} ({entry.n_bytes} bytes){note}")
    print(f"  total parameters = {report.total_parameters}")
    checksum = "OK" if report.checksum_ok else "FAIL"
    print(
        f"  checksum = {checksum} "
        f"(stored {report.stored_checksum:#010x}, computed {report.computed_checksum:#010x})"
    )
    return EXIT_OK if report.checksum_ok else EXIT_INPUT


def _add_common(parser: argparse.ArgumentParser, *, needs_content: bool = True) -> None:
    parser.add_argument("--job", help="JSON job file; flags fill unset fields, the file wins conflicts")
    parser.add_argument("--out", "-o", default="out.png", help="output PNG path (default out.png)")
    parser.add_argument("--server", help="URL of a running service; default runs in-process")
    parser.add_argument("--telemetry", help="write per-iteration JSON lines to this file")
    parser.add_argument("--model", help="weight file (default: STYLE_MODEL_PATH)")
    parser.add_argument("--pooling", choices=["average", "max"], help="pooling variant")
    if needs_content:
        parser.add_argument("--content", help="content image")
    parser.add_argument("--iterations", type=int, help="optimiser iteration cap")
    parser.add_argument("--seed", type=int, help="seed for noise initialisation")
    parser.add_argument("--init", choices=["content", "noise", "provided"], help="start image")
    parser.add_argument("--init-image", help="start image file for --init provided")
    parser.add_argument("--content-weight", type=float, help="content term weight")
    parser.add_argument("--style-weight", type=float, help="total style weight")
    parser.add_argument("--content-layers", help="comma-separated content layer names")
    parser.add_argument("--style-layers", help="comma-separated style layer names")
    parser.add_argument(
        "--style-layer-weight",
        action="append",
        metavar="LAYER=W",
        help="per-layer style weight (repeatable; must cover all style layers)",
    )


def _add_style_flag(parser: argparse.ArgumentParser, repeatable: bool = False) -> None:
    help_text = "style image" + (" (repeatable)" if repeatable else "")
    parser.add_argument("--style", action="append", help=help_text)


def build_parser() -> _Parser:
    parser = _Parser(prog="styleforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True, metavar="COMMAND")

    p = sub.add_parser("transfer", help="stylise one image with one style")
    _add_common(p)
    _add_style_flag(p)

    p = sub.add_parser(
        "spatial", help="stylise with region masks guiding the statistics"
    )
    _add_common(p)
    _add_style_flag(p, repeatable=True)
    p.add_argument(
        "--content-mask",
        action="append",
        metavar="REGION=PATH",
        help="content-side region mask (repeatable)",
    )
    p.add_argument(
        "--style-mask",
        action="append",
        metavar="[STYLE:]REGION=PATH",
        help="style-side region mask; STYLE indexes the --style list (repeatable)",
    )
    p.add_argument(
        "--region-weight", action="append", metavar="REGION=W", help="per-region loss weight"
    )
    p.add_argument("--guidance", choices=["simple", "eroded"], help="mask propagation mode")
    p.add_argument("--method", choices=["gram", "sum"], help="per-region or stacked statistics")
    p.add_argument(
        "--global-channel",
        choices=["auto", "on", "off"],
        help="add an everywhere-on guidance region (auto: single-style jobs only)",
    )

    p = sub.add_parser(
        "color-preserve", help="stylise while keeping the content's colours"
    )
    _add_common(p)
    _add_style_flag(p)
    p.add_argument(
        "--mode",
        dest="color_mode",
        choices=["luminance", "match"],
        help="luminance-only transfer, or recolour the style first",
    )
    p.add_argument(
        "--match-method",
        choices=["symmetric", "cholesky"],
        help="colour matching transform flavour",
    )
    p.add_argument(
        "--prematch",
        choices=["auto", "on", "off"],
        help="align style luminance statistics before the luminance transfer",
    )

    p = sub.add_parser(
        "mix-style",
        help="combine fine texture of one style with coarse structure of another",
    )
    _add_common(p)
    p.add_argument("--fine", help="style supplying the fine statistics")
    p.add_argument("--coarse", help="style supplying the coarse structure")
    p.add_argument("--fine-layers", help="comma-separated layers taken from the fine style")
    p.add_argument("--mixed-out", help="also write the intermediate mixed style image here")

    p = sub.add_parser(
        "highres", help="coarse-to-fine synthesis for large images"
    )
    _add_common(p)
    _add_style_flag(p)
    p.add_argument("--budget", type=int, help="pixel budget of the first stage")
    p.add_argument("--refine-fraction", type=float, help="iteration decay between stages")
    p.add_argument(
        "--refine-iterations", type=int, help="iteration count for every refinement stage"
    )

    p = sub.add_parser(
        "inspect-weights", help="verify and summarise a weight file"
    )
    p.add_argument("weights", help="weight file path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.mode == "inspect-weights":
            return run_inspect(args)
        job = build_job(args)
        return asyncio.run(_run_remote(args, job))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exit_code_for(type(exc).__name__)


if __name__ == "__main__":
    sys.exit(main())
