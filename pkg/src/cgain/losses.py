"""Batch losses for the imputation game and their gradients.

Every loss is a per-sample sum over features averaged over the batch.  The
``*_and_grad`` variants also return the gradient with respect to the
probability-valued argument; the plain names return the value only.
"""

from __future__ import annotations

import numpy as np

from .data import BINARY
from .nn import PROB_FLOOR


def _clamp(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def adversarial_loss_and_grad(mask, m_hat):
    """Generator's adversarial term, counted on missing cells only."""
    m_hat = _clamp(m_hat)
    n = mask.shape[0]
    miss = 1.0 - mask
    value = -np.sum(miss * np.log(m_hat)) / n
    return float(value), -miss / m_hat / n


def reconstruction_loss_and_grad(x, reconstruction, mask, kinds):
    """Reconstruction error on observed cells.

    Squared error for numeric features, ``-x log(r)`` for binary ones.
    ``reconstruction`` is the generator output for every cell.
    """
    n = mask.shape[0]
    binary = np.array([k == BINARY for k in kinds], dtype=bool)
    r = reconstruction
    diff = x - r
    per_cell = np.where(binary, -x * np.log(_clamp(r)), diff * diff)
    grad = np.where(binary, -x / _clamp(r), -2.0 * diff)
    value = np.sum(mask * per_cell) / n
    return float(value), mask * grad / n


def discriminator_loss_and_grad(mask, m_hat):
    m_hat = _clamp(m_hat)
    n = mask.shape[0]
    value = -np.sum(mask * np.log(m_hat) + (1.0 - mask) * np.log(1.0 - m_hat)) / n
    grad = (-mask / m_hat + (1.0 - mask) / (1.0 - m_hat)) / n
    return float(value), grad


def classification_loss_and_grad(y, y_hat):
    """Binary cross entropy; ``y`` is (n,) or (n, 1), ``y_hat`` is (n, 1)."""
    y = np.asarray(y, dtype=np.float64).reshape(y_hat.shape)
    p = _clamp(y_hat)
    n = y_hat.shape[0]
    value = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / n
    grad = (-y / p + (1.0 - y) / (1.0 - p)) / n
    return float(value), grad


def gain_loss_g(mask, m_hat) -> float:
    return adversarial_loss_and_grad(mask, m_hat)[0]


def gain_loss_r(x, reconstruction, mask, kinds) -> float:
    return reconstruction_loss_and_grad(x, reconstruction, mask, kinds)[0]


def gain_loss_d(mask, m_hat) -> float:
    return discriminator_loss_and_grad(mask, m_hat)[0]


def classifier_loss(y, y_hat) -> float:
    return classification_loss_and_grad(y, y_hat)[0]
