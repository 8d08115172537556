import os
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from colorama import Fore

from evosynth.constants import REPORT_VERSION
from evosynth.evolution.config import RunConfig
from evosynth.evolution.data import Dataset, load_mnist
from evosynth.evolution.errors import ArchitectureError, DatasetNotFoundError, DegenerateNetworkError
from evosynth.evolution.heredity import DnaModel, encode_dna, export_dna
from evosynth.evolution.metrics import (
    GenerationRecord,
    Report,
    record_generation,
    write_report,
)
from evosynth.evolution.network import (
    ClusterPartition,
    NetworkArch,
    build_network,
    cluster_partition,
    count_live_clusters,
    count_synapses,
    inherit,
    save_checkpoint,
)
from evosynth.evolution.synthesis import (
    EnvFactors,
    calibrate,
    expected_synapse_count,
    sample_offspring,
    synapse_count_std,
)
from evosynth.evolution.trainer import Trainer
from evosynth.evolution.utils import (
    COLD_START_KEY,
    INIT_KEY,
    derive_seed,
    generation_seed,
    timestamp,
)

Evaluator = Callable[[NetworkArch, Dataset], float]

ACCURACY_DECIMALS = 12


def accuracy_drop(first_accuracy: float, accuracy: float) -> float:
    """Drop since generation 1, rounded to ACCURACY_DECIMALS places."""
    return round(first_accuracy - accuracy, ACCURACY_DECIMALS)


def confirm_dataset_paths(config: RunConfig):
    for path in [config.train_images, config.train_labels, config.test_images, config.test_labels]:
        if not os.path.exists(path):
            raise DatasetNotFoundError(path)


def load_datasets(config: RunConfig) -> Tuple[Dataset, Dataset]:
    confirm_dataset_paths(config)
    train_set = load_mnist(config.train_images, config.train_labels, split="train")
    test_set = load_mnist(config.test_images, config.test_labels, split="test")
    return train_set, test_set


@dataclass(frozen=True, eq=False)
class SynthesisStep:
    dna: DnaModel
    env: EnvFactors
    masks: Tuple[np.ndarray, ...]
    expected: float
    std: float
    child: NetworkArch


class Evolver:
    """Runs a single lineage: train the ancestor, then repeatedly encode,
    calibrate, sample, retrain and evaluate until the accuracy drop exceeds
    the threshold or max_generations is reached."""

    def __init__(
        self,
        config: RunConfig,
        trainer: Optional[Trainer] = None,
        evaluator: Optional[Evaluator] = None,
        output_dir: Optional[str] = None,
    ):
        self.config = config.validate()
        self.trainer = trainer or Trainer(
            lr=config.lr, momentum=config.momentum, batch_size=config.batch_size
        )
        self.evaluator = evaluator or self.trainer.evaluate
        self.output_dir = output_dir or config.output_dir
        self.env = EnvFactors(budget=config.budget, mode=config.encoding_mode)
        self.started = timestamp()
        self._layer_names: List[str] = []
        self._ancestor_clusters: List[int] = []

    @property
    def checkpoint_dir(self) -> str:
        return os.path.join(self.output_dir, "checkpoints")

    @property
    def dna_dir(self) -> str:
        return os.path.join(self.output_dir, "dna")

    def checkpoint_path(self, generation: int) -> str:
        return os.path.join(self.checkpoint_dir, f"generation_{generation}.pkl.gz")

    def build_ancestor(self) -> NetworkArch:
        return build_network(
            self.config.arch_config, seed=derive_seed(self.config.seed, 1, INIT_KEY)
        )

    def train_ancestor(self, train_set: Dataset) -> NetworkArch:
        ancestor = self.build_ancestor()
        print(
            f"{Fore.GREEN}Training generation 1 ancestor ({count_synapses(ancestor).total}"
            f" synapses) for {self.config.ancestor_epochs} epochs.{Fore.RESET}"
        )
        return self.trainer.train(
            ancestor,
            train_set,
            self.config.ancestor_epochs,
            generation_seed(self.config.seed, 1),
        )

    def synthesize_offspring(
        self, parent: NetworkArch, partition: ClusterPartition, seed: int
    ) -> SynthesisStep:
        dna = encode_dna(
            parent,
            partition,
            tau_policy=self.config.tau_policy,
            tau_value=self.config.tau_value,
        )
        if self.config.export_dna:
            export_dna(dna, os.path.join(self.dna_dir, f"generation_{parent.generation}.json"))

        env = calibrate(dna, self.env, parent_count=count_synapses(parent).total)
        expected = expected_synapse_count(dna, env)
        std = synapse_count_std(dna, env)
        masks = sample_offspring(dna, env, np.random.default_rng(seed))
        child = inherit(
            parent,
            masks,
            inheritance=self.config.inheritance,
            seed=derive_seed(seed, COLD_START_KEY),
        )
        return SynthesisStep(dna=dna, env=env, masks=masks, expected=expected, std=std, child=child)

    def build_report(self, records: List[GenerationRecord], **extra) -> Report:
        metadata = {
            "seed": self.config.seed,
            "config_digest": self.config.digest(),
            "config": self.config.to_dict(),
            "started": self.started,
            "finished": timestamp(),
            "report_version": REPORT_VERSION,
            **extra,
        }
        return Report(
            metadata=metadata,
            layer_names=tuple(self._layer_names),
            ancestor_clusters=tuple(self._ancestor_clusters),
            records=tuple(records),
        )

    def _save(self, net: NetworkArch, records: List[GenerationRecord], **extra):
        if self.config.save_checkpoints:
            save_checkpoint(net, self.checkpoint_path(net.generation))
        write_report(self.build_report(records, **extra), self.output_dir)

    def evolve(
        self,
        train_set: Dataset,
        test_set: Dataset,
        ancestor: Optional[NetworkArch] = None,
    ) -> List[GenerationRecord]:
        config = self.config
        if ancestor is None:
            ancestor = self.train_ancestor(train_set)
        elif ancestor.generation != 1:
            raise ArchitectureError(
                f"evolution starts from a generation 1 ancestor, got generation {ancestor.generation}"
            )

        partition = cluster_partition(ancestor)
        ancestor_synapses = count_synapses(ancestor).total
        self._layer_names = ancestor.layer_names
        self._ancestor_clusters = count_live_clusters(ancestor, partition)

        first_accuracy = self.evaluator(ancestor, test_set)
        records = [
            record_generation(
                ancestor,
                partition,
                first_accuracy,
                ancestor_synapses,
                self._ancestor_clusters,
                seed=generation_seed(config.seed, 1),
            )
        ]
        print(f"{Fore.GREEN}{records[-1].summary_line()}{Fore.RESET}")
        self._save(ancestor, records, stopped_early=False)

        parent = ancestor
        stopped_early = False
        for generation in range(2, config.max_generations + 1):
            seed = generation_seed(config.seed, generation)
            step = self.synthesize_offspring(parent, partition, seed)

            counts = count_synapses(step.child)
            empty = [name for name, n in zip(step.child.layer_names, counts.per_layer) if n == 0]
            if empty:
                raise DegenerateNetworkError(
                    f"generation {generation} lost every synapse in {', '.join(empty)}"
                )
            if abs(counts.total - step.expected) > 3 * step.std:
                print(
                    f"{Fore.YELLOW}gen {generation}: {counts.total} synapses is more than 3 sigma"
                    f" from the expected {step.expected:.1f}±{step.std:.1f}.{Fore.RESET}"
                )

            child = self.trainer.train(step.child, train_set, config.generation_epochs, seed)
            accuracy = self.evaluator(child, test_set)
            records.append(
                record_generation(
                    child,
                    partition,
                    accuracy,
                    ancestor_synapses,
                    self._ancestor_clusters,
                    seed=seed,
                    expected_synapses=step.expected,
                    synapses_std=step.std,
                )
            )
            print(f"{Fore.GREEN}{records[-1].summary_line()}{Fore.RESET}")

            drop = accuracy_drop(first_accuracy, accuracy)
            stopped_early = drop > config.accuracy_drop_threshold
            self._save(child, records, stopped_early=stopped_early)
            if stopped_early:
                print(
                    f"{Fore.YELLOW}Stopping at generation {generation}: accuracy dropped by"
                    f" {drop:.4f} (> {config.accuracy_drop_threshold})"
                    f" since generation 1.{Fore.RESET}"
                )
                break
            parent = child

        return records
