"""Command-line entry points for the labeling pipeline.

Stage failures exit nonzero with a machine-readable JSON error on stderr.
The project root defaults to the KPLABEL_PROJECT environment variable.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from . import pipeline
from .errors import KplabelError

_project_option = click.option(
    "--project", "-p", "root", envvar="KPLABEL_PROJECT", required=True,
    type=click.Path(exists=True, file_okay=False),
    help="Project directory (or set KPLABEL_PROJECT).")


def _stage(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except KplabelError as exc:
            json.dump({"error": type(exc).__name__, "message": str(exc)},
                      sys.stderr)
            sys.stderr.write("\n")
            sys.exit(1)
    return wrapper


@click.group()
def main():
    """Generate pose labels for RGB-D scenes from sparse keypoint clicks."""


@main.command()
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_dir", type=click.Path(file_okay=False))
@_stage
def simulate(spec_path, dataset_dir):
    """Generate a ground-truthed synthetic dataset from a world spec."""
    proj = pipeline.stage_simulate(spec_path, dataset_dir)
    click.echo(f"wrote {len(proj.scenes)} scenes to {dataset_dir}")


@main.command()
@_project_option
@_stage
def optimize(root):
    """Solve for the sparse keypoint model and scene transforms."""
    solution = pipeline.stage_optimize(root)
    click.echo(f"solved in {solution.iterations} iterations, "
               f"rms residual {solution.rms_residual:.3e} m")


@main.command()
@_project_option
@_stage
def densify(root):
    """Grow the dense object model from the sparse-model seeds."""
    model = pipeline.stage_densify(root)
    click.echo(f"dense model: {len(model.points)} points")


@main.command()
@_project_option
@click.option("--hz", type=float, default=None,
              help="Frame sampling rate; 0 labels every frame.")
@_stage
def label(root, hz):
    """Back-project the models into every sampled frame."""
    counts = pipeline.stage_label(root, sample_hz=hz)
    click.echo(f"labeled {sum(counts.values())} frames across {len(counts)} scenes")


@main.command()
@_project_option
@click.argument("annotations_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@_stage
def register(root, annotations_path, manifest_path):
    """Register a new scene against the solved sparse model (>= 3 clicks)."""
    result = pipeline.stage_register(root, annotations_path, manifest_path)
    click.echo(f"registered with rms residual {result.rms_residual:.3e} m "
               f"over {len(result.keypoint_ids)} keypoints")


@main.command()
@_project_option
@_stage
def evaluate(root):
    """Score outputs against the oracle ground truth in gt/."""
    report = pipeline.stage_evaluate(root)
    click.echo(json.dumps(report.to_dict(), indent=2))


@main.command("annotate-serve")
@_project_option
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--allow-solve", is_flag=True,
              help="Enable the long-running POST /api/solve endpoint.")
@_stage
def annotate_serve(root, host, port, allow_solve):
    """Serve the annotation HTTP API for the browser tool."""
    import uvicorn

    from .server import create_app
    uvicorn.run(create_app(root, allow_solve=allow_solve), host=host, port=port)


if __name__ == "__main__":
    main()
