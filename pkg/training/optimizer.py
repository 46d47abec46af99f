#!/usr/bin/env python3
"""
Optimizer

Adam over named numpy parameter groups, with exponential learning-rate
schedules and the row-wise state surgery adaptive density control needs.
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


def get_expon_lr_func(lr_init, lr_final, lr_delay_steps=0, lr_delay_mult=1.0, max_steps=1000000):
    """
    Log-linear interpolation from ``lr_init`` at step 0 to ``lr_final`` at
    ``max_steps``, with an optional warm-up delay.
    """

    def helper(step):
        if lr_init == lr_final:
            return lr_init
        if step < 0 or (lr_init == 0.0 and lr_final == 0.0):
            return 0.0
        if lr_delay_steps > 0:
            delay_rate = lr_delay_mult + (1 - lr_delay_mult) * np.sin(
                0.5 * np.pi * np.clip(step / lr_delay_steps, 0, 1))
        else:
            delay_rate = 1.0
        t = np.clip(step / max_steps, 0, 1)
        return float(delay_rate * np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))

    return helper


@dataclass
class AdamState:
    schedule: object
    exp_avg: np.ndarray
    exp_avg_sq: np.ndarray
    step: int = 0


class Adam:
    """Adam (beta 0.9/0.999, eps 1e-15) keyed by group name."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.betas = betas
        self.eps = eps
        self.states = {}

    def add_group(self, name, param, schedule):
        """
        Register a parameter group.

        Args:
            name (str): Group key
            param (np.ndarray): Parameter array (shape of the moments)
            schedule (callable or float): Iteration -> learning rate
        """
        if not callable(schedule):
            value = float(schedule)
            schedule = lambda step, value=value: value  # noqa: E731
        self.states[name] = AdamState(schedule, np.zeros_like(param), np.zeros_like(param))

    def lr(self, name, iteration):
        return self.states[name].schedule(iteration)

    def step(self, name, param, grad, iteration):
        """Return the updated parameter for one group."""
        state = self.states[name]
        beta1, beta2 = self.betas
        state.step += 1
        state.exp_avg = beta1 * state.exp_avg + (1.0 - beta1) * grad
        state.exp_avg_sq = beta2 * state.exp_avg_sq + (1.0 - beta2) * grad * grad
        bias1 = 1.0 - beta1 ** state.step
        bias2 = 1.0 - beta2 ** state.step
        denom = np.sqrt(state.exp_avg_sq) / np.sqrt(bias2) + self.eps
        return param - (state.schedule(iteration) / bias1) * state.exp_avg / denom

    def keep_rows(self, name, mask):
        """Drop moment rows where ``mask`` is False."""
        state = self.states[name]
        state.exp_avg = state.exp_avg[mask]
        state.exp_avg_sq = state.exp_avg_sq[mask]

    def append_rows(self, name, count):
        """Append zero moments for ``count`` new rows."""
        state = self.states[name]
        pad = np.zeros((count,) + state.exp_avg.shape[1:])
        state.exp_avg = np.concatenate([state.exp_avg, pad])
        state.exp_avg_sq = np.concatenate([state.exp_avg_sq, pad])

    def reset(self, name):
        state = self.states[name]
        state.exp_avg = np.zeros_like(state.exp_avg)
        state.exp_avg_sq = np.zeros_like(state.exp_avg_sq)
