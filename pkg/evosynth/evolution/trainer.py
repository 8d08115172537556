from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from evosynth.constants import EVOSYNTH_THREADS, SHOW_PROGRESS
from evosynth.evolution import network, numerics
from evosynth.evolution.data import Dataset, batches, num_batches
from evosynth.evolution.errors import TrainingDivergedError
from evosynth.evolution.network import NetworkArch
from evosynth.evolution.utils import derive_seed


class Trainer:
    """Momentum SGD over masked networks.

    workers == 0 runs single-threaded and is the deterministic mode. With
    workers > 0 each batch is split into that many contiguous chunks whose
    gradients are computed on a thread pool and summed in chunk order, so a
    fixed worker count still gives reproducible results.
    """

    def __init__(
        self,
        lr: float = 0.01,
        momentum: float = 0.9,
        batch_size: int = 64,
        workers: int = EVOSYNTH_THREADS,
        show_progress: bool = SHOW_PROGRESS,
        eval_batch_size: int = 1000,
    ):
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.workers = workers
        self.show_progress = show_progress
        self.eval_batch_size = eval_batch_size

    def _chunk_gradients(self, net, images, labels):
        logits, cache = network.forward(net, images, keep_cache=True)
        loss, logits_grad = numerics.softmax_cross_entropy(logits, labels)
        return loss, network.backward(net, cache, logits_grad)

    def loss_and_gradients(
        self,
        net: NetworkArch,
        images: np.ndarray,
        labels: np.ndarray,
        pool: Optional[ThreadPoolExecutor] = None,
    ) -> Tuple[float, List[numerics.LayerGrad]]:
        if pool is None or self.workers <= 1 or len(images) < 2:
            return self._chunk_gradients(net, images, labels)

        chunks = [c for c in np.array_split(np.arange(len(images)), self.workers) if c.size]
        results = list(
            pool.map(lambda c: self._chunk_gradients(net, images[c], labels[c]), chunks)
        )
        total = len(images)
        loss = 0.0
        grads = None
        for chunk, (chunk_loss, chunk_grads) in zip(chunks, results):
            share = chunk.size / total
            loss += share * chunk_loss
            scaled = [
                numerics.LayerGrad(
                    share * g.weight_grad, share * g.bias_grad, g.input_grad
                )
                for g in chunk_grads
            ]
            if grads is None:
                grads = scaled
            else:
                grads = [
                    numerics.LayerGrad(
                        acc.weight_grad + g.weight_grad, acc.bias_grad + g.bias_grad, None
                    )
                    for acc, g in zip(grads, scaled)
                ]
        return loss, grads

    def train(
        self, net: NetworkArch, dataset: Dataset, epochs: int, seed: int
    ) -> NetworkArch:
        names = net.layer_names
        weights = list(net.weights)
        biases = list(net.biases)
        weight_velocity = [np.zeros_like(w) for w in weights]
        bias_velocity = [np.zeros_like(b) for b in biases]
        bias_masks = [np.ones_like(b) for b in biases]

        pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        try:
            for epoch in range(epochs):
                progress = tqdm(
                    batches(dataset, self.batch_size, derive_seed(seed, epoch)),
                    total=num_batches(dataset, self.batch_size),
                    desc=f"gen {net.generation} epoch {epoch + 1}/{epochs}",
                    disable=not self.show_progress,
                    leave=False,
                )
                for batch_index, (images, labels) in enumerate(progress):
                    loss, grads = self.loss_and_gradients(net, images, labels, pool)
                    if not np.isfinite(loss):
                        raise TrainingDivergedError(epoch + 1, batch_index, loss)
                    for p, grad in enumerate(grads):
                        weights[p], weight_velocity[p] = numerics.sgd_step(
                            weights[p],
                            net.masks[p],
                            grad.weight_grad,
                            self.lr,
                            self.momentum,
                            weight_velocity[p],
                            name=f"{names[p]}.weight",
                        )
                        biases[p], bias_velocity[p] = numerics.sgd_step(
                            biases[p],
                            bias_masks[p],
                            grad.bias_grad,
                            self.lr,
                            self.momentum,
                            bias_velocity[p],
                            name=f"{names[p]}.bias",
                        )
                    net = net.replace(weights=tuple(weights), biases=tuple(biases))
                    progress.set_postfix(loss=f"{loss:.4f}")
        finally:
            if pool is not None:
                pool.shutdown()
        return net

    def evaluate(self, net: NetworkArch, dataset: Dataset) -> float:
        correct = 0
        for start in tqdm(
            range(0, len(dataset), self.eval_batch_size),
            desc=f"gen {net.generation} eval",
            disable=not self.show_progress,
            leave=False,
        ):
            stop = start + self.eval_batch_size
            predictions = network.predict(net, dataset.images[start:stop])
            correct += int(np.sum(predictions == dataset.labels[start:stop]))
        return correct / len(dataset)
