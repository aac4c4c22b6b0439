"""Command line interface."""

from __future__ import annotations

from contextlib import contextmanager
import csv
import functools
import logging
from pathlib import Path
import sys
from typing import Any, Callable, Iterator, Optional, Sequence

import click
import numpy as np

from .config import (
    PRESETS,
    PipelineConfig,
    config_hash,
    dump_config,
    load_preset,
    parse_config,
    with_overrides,
)
from .errors import ConfigError, DotShapeError, GeometryError, NumericalError
from .grid import build_boundary
from .levelset import extract_shape
from .reconstruction import Reconstructor, Snapshot, source_data, sweep_norms
from .sensitivity import clear_layer_fraction, configured_requests, sensitivity_batch
from .writers import (
    RunManifest,
    read_field,
    read_residual_history,
    write_field,
    write_residual_history,
    write_sweep_norms,
    write_trace_csv,
)

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class Run:
    """Output directory and manifest of one command."""

    def __init__(self, command: str, config: PipelineConfig) -> None:
        """Prepare the output directory."""
        self.config = config
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(
            command=command,
            config=config.model_dump(mode="json"),
            config_hash=config_hash(config),
        )

    def field(self, values: np.ndarray, name: str, kind: str, dx: float, preview: bool = True) -> None:
        """Write a field as raw plus an optional PGM preview."""
        paths = write_field(values, self.out / f"{name}.raw", "raw", dx)
        if preview:
            paths += write_field(values, self.out / f"{name}.pgm", "pgm", dx)
        self.manifest.add_files(paths, kind, self.out)

    def files(self, paths: Sequence[Path], kind: str) -> None:
        """Record files written elsewhere."""
        self.manifest.add_files(paths, kind, self.out)

    def snapshot_writer(self, dx: float) -> Callable[[Snapshot], None]:
        """Callback writing every field of a snapshot."""

        def write(snapshot: Snapshot) -> None:
            for name, values in snapshot.fields.items():
                self.field(values, f"snapshots/{snapshot.label}_{name}", "snapshot", dx)

        return write


@contextmanager
def _run(command: str, config: PipelineConfig) -> Iterator[Run]:
    """Yield a Run and always flush its manifest."""
    run = Run(command, config)
    (run.out / "config.json").write_text(dump_config(config), encoding="utf-8")
    run.files([run.out / "config.json"], "config")
    try:
        with run.manifest.timing(command):
            yield run
    except DotShapeError as err:
        run.manifest.status = "failed"
        run.manifest.error = str(err)
        raise
    except Exception as err:  # pylint: disable=broad-except
        run.manifest.status = "failed"
        run.manifest.error = f"{type(err).__name__}: {err}"
        raise
    else:
        run.manifest.status = "ok"
    finally:
        run.manifest.write(run.out / "manifest.json")


def _load(options: dict[str, Any], sweeps_key: str | None) -> PipelineConfig:
    """Configuration from --config or --preset with command-line overrides."""
    if options["config_path"] and options["preset"]:
        raise click.UsageError("--config and --preset are mutually exclusive")
    if options["config_path"]:
        config = parse_config(options["config_path"])
    elif options["preset"]:
        config = load_preset(options["preset"])
    else:
        config = PipelineConfig()
    overrides: dict[str, Any] = {}
    if options["out"] is not None:
        overrides["output_dir"] = options["out"]
    if options["threads"] is not None:
        overrides["threads"] = options["threads"]
    if options["snapshot_every"] is not None:
        overrides["inversion.snapshot_every"] = options["snapshot_every"]
    if options["sweeps"] is not None:
        if sweeps_key is None:
            raise click.UsageError("--sweeps does not apply to this command")
        overrides[sweeps_key] = options["sweeps"]
    return with_overrides(config, overrides) if overrides else config


def common_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by every subcommand."""

    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON configuration file.")
    @click.option("--preset", type=click.Choice(PRESETS), default=None, help="Shipped experiment preset.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--sweeps", type=click.IntRange(min=0), default=None, help="Override the sweep count.")
    @click.option("--snapshot-every", type=click.IntRange(min=1), default=None, help="Extra snapshot period.")
    @click.option("--seedless", is_flag=True, default=True, help="Deterministic run (always on).")
    @click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads for independent solves.")
    @click.option("--verbose", "-v", is_flag=True, default=False, help="Debug logging.")
    @functools.wraps(func)
    def wrapper(**kwargs: Any) -> Any:
        verbose = kwargs.pop("verbose")
        kwargs.pop("seedless")
        logging.basicConfig(
            level=logging.DEBUG if verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return func(**kwargs)

    return wrapper


@click.group()
def cli() -> None:
    """Shape reconstruction in optical tomography from boundary transport data."""


@cli.command()
@common_options
def phantom(**options: Any) -> None:
    """Write the true medium fields."""
    config = _load(options, None)
    with _run("phantom", config) as run:
        recon = Reconstructor(config)
        dx = recon.grid.dx
        run.field(recon.truth.a, "truth_a", "field", dx)
        run.field(recon.truth.b, "truth_b", "field", dx)
        run.field(recon.truth.clear_mask.astype(float), "clear_mask", "field", dx)
        run.field(recon.background.frozen_mask.astype(float), "frozen_mask", "field", dx)


@cli.command()
@common_options
@click.option("--source", "source_index", type=click.IntRange(min=0), default=0, show_default=True, help="Source index.")
@click.option("--amplitude", type=float, default=None, help="Override the source amplitude.")
def forward(source_index: int, amplitude: Optional[float], **options: Any) -> None:
    """Solve one source on the true medium and write its trace."""
    config = _load(options, None)
    with _run("forward", config) as run:
        recon = Reconstructor(config)
        if source_index >= len(recon.sources):
            raise click.UsageError(f"--source must be below {len(recon.sources)}")
        source = recon.sources[source_index]
        if amplitude is not None:
            source = source.scaled(amplitude)
        data = source_data(
            source_index,
            source,
            recon.truth,
            recon.kernel,
            recon.time_grid,
            config.receivers.min_arc,
            tuple(config.receivers.window),
            recon.cfl_max,
        )
        path = write_trace_csv(data.observed, run.out / f"trace_source{source_index:02d}.csv")
        run.files([path], "trace")


@cli.command()
@common_options
def generate(**options: Any) -> None:
    """Write synthetic data of every source."""
    config = _load(options, None)
    with _run("generate", config) as run:
        recon = Reconstructor(config)
        with run.manifest.timing("generate_data"):
            data_set = recon.generate()
        for data in data_set:
            path = write_trace_csv(data.observed, run.out / "data" / f"source{data.index:02d}.csv")
            run.files([path], "trace")


@cli.command()
@common_options
def tbt(**options: Any) -> None:
    """Run the TBT phase and write a_TBT."""
    config = _load(options, "inversion.tbt_sweeps")
    with _run("tbt", config) as run:
        recon = Reconstructor(config)
        recon.snapshot_cb.append(run.snapshot_writer(recon.grid.dx))
        with run.manifest.timing("generate_data"):
            data_set = recon.generate()
        with run.manifest.timing("tbt"):
            state = recon.run_tbt(data_set)
        run.field(state.a, "a_tbt", "result", recon.grid.dx)
        run.files([write_residual_history(state.history, run.out / "residual_history.csv")], "history")
        run.manifest.derived.update({"eta_tbt": state.eta, "substeps": recon.time_grid.substeps})


@cli.command()
@common_options
@click.option("--a-tbt", "a_tbt_path", type=click.Path(dir_okay=False, exists=True), default=None, help="Raw a_TBT field; TBT runs first when omitted.")
def levelset(a_tbt_path: Optional[str], **options: Any) -> None:
    """Initialise from a_TBT and run the level set sweeps."""
    config = _load(options, "inversion.ls_sweeps")
    with _run("levelset", config) as run:
        recon = Reconstructor(config)
        recon.snapshot_cb.append(run.snapshot_writer(recon.grid.dx))
        with run.manifest.timing("generate_data"):
            data_set = recon.generate()
        history = []
        if a_tbt_path is not None:
            a_tbt, meta = read_field(a_tbt_path)
            if a_tbt.shape != recon.grid.shape:
                raise ConfigError(f"a_TBT field is {meta['nx']}x{meta['ny']}, grid is {recon.grid.shape}")
        else:
            with run.manifest.timing("tbt"):
                tbt_state = recon.run_tbt(data_set)
            a_tbt, history = tbt_state.a, tbt_state.history
        state = recon.init_levelset(a_tbt)
        with run.manifest.timing("levelset"):
            state = recon.run_levelset(state, data_set)
        _write_final(run, recon, state.phi, [*history, *state.history])
        run.manifest.derived.update({"eta_ls": state.eta})


@cli.command()
@common_options
def pipeline(**options: Any) -> None:
    """Full two-step reconstruction."""
    config = _load(options, "inversion.ls_sweeps")
    with _run("pipeline", config) as run:
        recon = Reconstructor(config)
        recon.snapshot_cb.append(run.snapshot_writer(recon.grid.dx))
        with run.manifest.timing("reconstruction"):
            result = recon.run()
        run.field(result.a_tbt, "a_tbt", "result", recon.grid.dx)
        _write_final(run, recon, result.state.phi, result.history)
        run.manifest.derived.update(result.derived)
        run.manifest.derived["initial_levelset_norm"] = result.initial_norm


def _write_final(run: Run, recon: Reconstructor, phi: np.ndarray, history: list) -> None:
    """Final level set, absorption, mask, components and residual logs."""
    dx = recon.grid.dx
    shape = extract_shape(phi, dx)
    run.field(phi, "final_phi", "result", dx)
    run.field((phi <= 0).astype(float), "final_mask", "result", dx)
    run.field(np.where(phi <= 0, recon.config.inversion.a_hat, recon.background.a), "final_a", "result", dx)
    components = run.out / "shape_components.csv"
    with components.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label", "cells", "area", "cx", "cy"])
        for comp in shape.components:
            writer.writerow([comp.label, comp.cells, repr(comp.area), repr(comp.centroid[0]), repr(comp.centroid[1])])
    run.files([components], "result")
    run.files([write_residual_history(history, run.out / "residual_history.csv")], "history")
    run.files([write_sweep_norms(sweep_norms(history), run.out / "sweep_norms.csv")], "history")


@cli.command()
@common_options
def sensitivity(**options: Any) -> None:
    """Sensitivity maps for the configured source, receivers and times."""
    config = _load(options, None)
    with _run("sensitivity", config) as run:
        recon = Reconstructor(config)
        tg = config.solver.time_grid(config.sensitivity.n_rec)
        source, requests = configured_requests(config, build_boundary(recon.grid))
        with run.manifest.timing("maps"):
            maps = sensitivity_batch(
                recon.truth, recon.kernel, source, requests, tg, config.threads, recon.cfl_max
            )
        summary = run.out / "sensitivity.csv"
        with summary.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["receiver", "arc", "t_r", "clear_fraction", "file"])
            for smap in maps:
                name = f"sensitivity_r{smap.receiver:03d}_t{smap.t_r:05.1f}"
                run.field(smap.values, name, "sensitivity", recon.grid.dx)
                try:
                    fraction = clear_layer_fraction(smap.values, recon.truth.clear_mask)
                except NumericalError:
                    fraction = float("nan")
                writer.writerow([smap.receiver, repr(smap.arc), repr(smap.t_r), repr(fraction), f"{name}.raw"])
        run.files([summary], "result")


@cli.command()
@common_options
def residuals(**options: Any) -> None:
    """Recompute per-sweep norms from a residual history."""
    config = _load(options, None)
    out = Path(config.output_dir)
    source = out / "residual_history.csv"
    if not source.is_file():
        raise ConfigError(f"no residual history in {out}")
    path = write_sweep_norms(sweep_norms(read_residual_history(source)), out / "sweep_norms.csv")
    _LOGGER.info("Wrote %s", path)


def cli_main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and map failures to exit codes."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="dotshape", standalone_mode=False)
    except click.ClickException as err:
        err.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        click.echo("Aborted", err=True)
        return 1
    except (ConfigError, GeometryError) as err:
        click.echo(f"Error: {err}", err=True)
        return EXIT_CONFIG
    except NumericalError as err:
        click.echo(f"Numerical failure: {err}", err=True)
        return EXIT_NUMERICAL
    except Exception as err:  # pylint: disable=broad-except
        _LOGGER.exception("Unexpected failure")
        click.echo(f"Numerical failure: {type(err).__name__}: {err}", err=True)
        return EXIT_NUMERICAL
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    """Console entry point."""
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
