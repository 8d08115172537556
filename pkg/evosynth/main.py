import os
from typing import Optional

import typer
from colorama import Fore

from evosynth.evolution.config import RunConfig, load_config, save_config
from evosynth.evolution.errors import ConfigError, EvosynthError
from evosynth.evolution.evolver import Evolver, load_datasets
from evosynth.evolution.heredity import encode_dna, export_dna
from evosynth.evolution.metrics import plot_report, read_report, write_report
from evosynth.evolution.network import cluster_partition, load_checkpoint, save_checkpoint

app = typer.Typer(
    help="Cluster-driven evolutionary synthesis of sparse convolutional networks.",
    add_completion=False,
)


def _fail(error: Exception, code: int):
    print(f"{Fore.RED}[ERROR] {error}{Fore.RESET}")
    raise typer.Exit(code=code)


def _resolve_config(
    config_path: Optional[str], seed: Optional[int], out: Optional[str]
) -> RunConfig:
    config = load_config(config_path) if config_path is not None else RunConfig().validate()
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if out is not None:
        changes["output_dir"] = out
    return config.replace(**changes) if changes else config


def _guard(command):
    """Run a command body, mapping config problems to exit code 2 and every
    other evosynth failure to exit code 1."""
    try:
        return command()
    except ConfigError as e:
        _fail(e, 2)
    except EvosynthError as e:
        _fail(e, 1)


@app.command()
def run(
    config: Optional[str] = typer.Option(None, "--config", "-c", help="JSON config file."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the master seed."),
    out: Optional[str] = typer.Option(None, "--out", help="Override the output directory."),
    ancestor: Optional[str] = typer.Option(
        None, "--ancestor", help="Resume from a trained generation 1 checkpoint."
    ),
):
    """Train (or load) the ancestor and evolve offspring generations."""

    def body():
        run_config = _resolve_config(config, seed, out)
        train_set, test_set = load_datasets(run_config)
        evolver = Evolver(run_config)
        save_config(run_config, os.path.join(evolver.output_dir, "config.json"))
        start = load_checkpoint(ancestor) if ancestor is not None else None
        records = evolver.evolve(train_set, test_set, ancestor=start)
        print(
            f"{Fore.GREEN}Evolution complete after {len(records)} generations."
            f" Report saved to {evolver.output_dir}.{Fore.RESET}"
        )

    _guard(body)


@app.command("train-ancestor")
def train_ancestor(
    config: Optional[str] = typer.Option(None, "--config", "-c", help="JSON config file."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the master seed."),
    out: Optional[str] = typer.Option(None, "--out", help="Override the output directory."),
):
    """Train and checkpoint the generation 1 ancestor only."""

    def body():
        run_config = _resolve_config(config, seed, out)
        train_set, test_set = load_datasets(run_config)
        evolver = Evolver(run_config)
        net = evolver.train_ancestor(train_set)
        accuracy = evolver.evaluator(net, test_set)
        path = save_checkpoint(net, evolver.checkpoint_path(1))
        print(f"{Fore.GREEN}Ancestor test accuracy {accuracy:.4f}, saved to {path}.{Fore.RESET}")

    _guard(body)


@app.command()
def report(
    run_dir: str = typer.Argument(..., help="Directory of a finished or interrupted run."),
    plot: bool = typer.Option(False, "--plot", help="Also draw efficiency.png."),
):
    """Regenerate the CSV reports of a run from its summary."""

    def body():
        loaded = read_report(run_dir)
        for path in write_report(loaded, run_dir):
            print(f"Wrote {path}.")
        if plot:
            print(f"Wrote {plot_report(loaded, os.path.join(run_dir, 'efficiency.png'))}.")
        for record in loaded.records:
            print(record.summary_line())

    _guard(body)


@app.command()
def dna(
    checkpoint: str = typer.Argument(..., help="Network checkpoint (.pkl.gz)."),
    out: str = typer.Option(..., "--out", help="Where to write the DNA JSON."),
    tau_policy: str = typer.Option("percentile", "--tau-policy", help="percentile or absolute."),
    tau_value: float = typer.Option(50.0, "--tau-value", help="Percentile or fixed threshold."),
):
    """Encode and export the synaptic probability model of a checkpoint."""

    def body():
        net = load_checkpoint(checkpoint)
        model = encode_dna(net, cluster_partition(net), tau_policy=tau_policy, tau_value=tau_value)
        print(f"{Fore.GREEN}DNA of generation {net.generation} saved to {export_dna(model, out)}.{Fore.RESET}")

    _guard(body)


if __name__ == "__main__":
    app()
