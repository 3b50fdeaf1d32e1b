"""Masked policy/value network over the fixed backbone.

The trunk is a stack of tanh layers plus a linear policy head, all drawn from
the backbone and gated per task by binarized mask scores. A separate linear
value head (and all biases) are trainable per task slot and reset at each
task change; they are never part of the transferred mask.

Score gradients use the straight-through rule: the binarization backward is
treated as identity, so d(scores) = d(effective weight) * backbone weight.
Mixing-coefficient gradients flow exactly through the softmax. A soft mode
(mask = scores instead of thresholded scores) exists so finite-difference
oracles can check the same backward code on a differentiable forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from maskmesh import kernels
from maskmesh.backbone import Backbone
from maskmesh.errors import ContractViolation
from maskmesh.masks import MaskScores, softmax


@dataclass
class ForwardCache:
    x: np.ndarray
    hiddens: list[np.ndarray]  # tanh outputs per trunk layer
    w_effs: list[np.ndarray]  # effective weights per backbone layer
    mix_weights: list[np.ndarray]  # softmax(beta) per layer
    logits: np.ndarray
    value: np.ndarray


class MaskedPolicy:
    """Trainable per-slot state bound to one task at a time."""

    def __init__(self, backbone: Backbone):
        self.backbone = backbone
        self.n_layers = len(backbone.layers)
        if self.n_layers < 2:
            raise ContractViolation("need at least one trunk layer and a policy head")
        self.hidden_dim = backbone.layers[-1].shape[1]
        self.n_actions = backbone.layers[-1].shape[0]
        self.task_id: int | None = None
        self.stored: list[MaskScores] = []
        self._stacks: list[np.ndarray | None] = []  # (k, out, in) per layer, None when store empty
        self.scores: list[np.ndarray] = []
        self.betas: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.value_w = np.zeros((1, self.hidden_dim))
        self.value_b = np.zeros(1)

    # ------------------------------------------------------------------
    # task binding
    # ------------------------------------------------------------------

    def bind_task(self, init_scores: MaskScores, stored: list[MaskScores]) -> None:
        """Start a task slot: fresh mixing logits, biases and value head.

        `stored` are the frozen consolidated masks in ascending task order;
        `init_scores` becomes the current-task term of the combination.
        """
        for l, w in enumerate(self.backbone.layers):
            if init_scores.layer_scores[l].shape != w.shape:
                raise ContractViolation(f"score shape mismatch at layer {l}")
        self.task_id = init_scores.task_id
        self.stored = stored
        k = len(stored)
        self._stacks = []
        for l in range(self.n_layers):
            if k:
                self._stacks.append(np.stack([m.layer_scores[l] for m in stored]))
            else:
                self._stacks.append(None)
        self.scores = [s.copy() for s in init_scores.layer_scores]
        self.betas = [np.zeros(k + 1) for _ in range(self.n_layers)]
        self.biases = [np.zeros(w.shape[0]) for w in self.backbone.layers]
        self.value_w = np.zeros((1, self.hidden_dim))
        self.value_b = np.zeros(1)

    def integrate_scores(self, received: MaskScores) -> None:
        """Replace the current-task scores in place (mask transfer landed)."""
        for l, w in enumerate(self.backbone.layers):
            if received.layer_scores[l].shape != w.shape:
                raise ContractViolation(f"received score shape mismatch at layer {l}")
        self.scores = [s.copy() for s in received.layer_scores]

    # ------------------------------------------------------------------
    # forward / backward
    # ------------------------------------------------------------------

    def effective_scores(self) -> list[np.ndarray]:
        """Softmax-weighted mixture of stored masks plus the current scores, per layer."""
        out = []
        for l in range(self.n_layers):
            w = softmax(self.betas[l])
            mixed = w[-1] * self.scores[l]
            if self._stacks[l] is not None:
                mixed = mixed + np.tensordot(w[:-1], self._stacks[l], axes=1)
            out.append(mixed)
        return out

    def forward(self, x: np.ndarray, hard: bool = True) -> ForwardCache:
        if x.ndim != 2 or x.shape[1] != self.backbone.layers[0].shape[1]:
            raise ContractViolation(f"observation batch shape {x.shape} does not match fan_in")
        mix_weights = [softmax(b) for b in self.betas]
        w_effs = []
        for l, w in enumerate(self.backbone.layers):
            s_eff = mix_weights[l][-1] * self.scores[l]
            if self._stacks[l] is not None:
                s_eff = s_eff + np.tensordot(mix_weights[l][:-1], self._stacks[l], axes=1)
            w_effs.append(kernels.masked_weight(w, s_eff) if hard else w * s_eff)
        hiddens = []
        h = x
        for l in range(self.n_layers - 1):
            h = kernels.affine_tanh_fwd(h, w_effs[l], self.biases[l])
            hiddens.append(h)
        logits = kernels.affine_fwd(h, w_effs[-1], self.biases[-1])
        value = kernels.affine_fwd(h, self.value_w, self.value_b)[:, 0]
        return ForwardCache(x=x, hiddens=hiddens, w_effs=w_effs, mix_weights=mix_weights, logits=logits, value=value)

    def backward(self, cache: ForwardCache, d_logits: np.ndarray, d_value: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the loss whose logit/value gradients are given."""
        grads: dict[str, np.ndarray] = {}
        h_last = cache.hiddens[-1]
        d_value_col = d_value[:, None]
        _, d_vw, d_vb = kernels.affine_bwd(h_last, self.value_w, d_value_col)
        grads["value_w"] = d_vw
        grads["value_b"] = d_vb
        d_h = d_value_col @ self.value_w

        d_x, d_w_eff, d_b = kernels.affine_bwd(h_last, cache.w_effs[-1], d_logits)
        d_h = d_h + d_x
        self._masked_layer_grads(grads, self.n_layers - 1, d_w_eff)
        grads[f"bias.{self.n_layers - 1}"] = d_b

        for l in range(self.n_layers - 2, -1, -1):
            below = cache.x if l == 0 else cache.hiddens[l - 1]
            d_x, d_w_eff, d_b = kernels.affine_bwd(below, cache.w_effs[l], d_h, tanh_out=cache.hiddens[l])
            self._masked_layer_grads(grads, l, d_w_eff)
            grads[f"bias.{l}"] = d_b
            d_h = d_x
        return grads

    def _masked_layer_grads(self, grads: dict[str, np.ndarray], l: int, d_w_eff: np.ndarray) -> None:
        # Straight-through: gradient w.r.t. the mixed scores is d_w_eff scaled
        # by the backbone weight, then split between current scores and betas.
        d_s_eff = d_w_eff * self.backbone.layers[l]
        w = softmax(self.betas[l])
        grads[f"scores.{l}"] = w[-1] * d_s_eff
        k = len(w) - 1
        u = np.empty(k + 1)
        if k:
            u[:k] = np.tensordot(self._stacks[l], d_s_eff, axes=([1, 2], [0, 1]))
        u[k] = float(np.tensordot(self.scores[l], d_s_eff, axes=([0, 1], [0, 1])))
        grads[f"beta.{l}"] = w * (u - float(w @ u))

    # ------------------------------------------------------------------
    # parameter access
    # ------------------------------------------------------------------

    def trainable(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for l in range(self.n_layers):
            params[f"scores.{l}"] = self.scores[l]
            params[f"beta.{l}"] = self.betas[l]
            params[f"bias.{l}"] = self.biases[l]
        params["value_w"] = self.value_w
        params["value_b"] = self.value_b
        return params


def mask_logits(backbone: Backbone, scores: MaskScores, x: np.ndarray) -> np.ndarray:
    """Canonical mask-only forward: binarized scores, zero biases, no value head.

    This is the evaluation configuration shared by every holder of the same
    backbone, so greedy returns from a transferred mask reproduce the
    sender's exactly.
    """
    h = x
    for l in range(len(backbone.layers) - 1):
        w_eff = kernels.masked_weight(backbone.layers[l], scores.layer_scores[l])
        h = np.tanh(h @ w_eff.T)
    w_eff = kernels.masked_weight(backbone.layers[-1], scores.layer_scores[-1])
    return h @ w_eff.T


def greedy_action(backbone: Backbone, scores: MaskScores, obs: np.ndarray) -> int:
    return int(np.argmax(mask_logits(backbone, scores, obs[None, :])[0]))
