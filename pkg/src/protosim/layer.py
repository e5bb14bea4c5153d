"""Prototype bank and (gumbel-)softmax token-to-prototype assignment.

Tokens are scored against every prototype with a reversed dot-product
attention, then each token is assigned to prototypes either softly
(a distribution over the bank) or hard (a straight-through one-hot).
Shapes follow the convention logits/assignments: (..., K, T) with K
prototypes competing per token column, tokens/embeddings: (..., T, D).
"""

from dataclasses import dataclass

import torch

SOFT = "soft"
HARD = "hard"

# The relaxation temperature is intentionally not a tuning surface.
TEMPERATURE = 1.0


def validate_bank(weights: torch.Tensor) -> None:
    if weights.ndim != 2:
        raise ValueError(f"prototype bank must be 2-D (K, D), got shape {tuple(weights.shape)}")
    k, d = weights.shape
    if k < 2 or d < 1:
        raise ValueError(f"prototype bank needs K >= 2 and D >= 1, got K={k}, D={d}")
    if not torch.isfinite(weights).all():
        raise ValueError("prototype bank contains non-finite entries")


def init_bank(num_prototypes: int, dim: int, generator: torch.Generator | None = None,
              dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Unit-variance normal rows scaled by 1/sqrt(D) so initial logits are O(1)."""
    weights = torch.randn(num_prototypes, dim, generator=generator, dtype=dtype)
    weights = weights / dim ** 0.5
    validate_bank(weights)
    return weights


@dataclass(frozen=True)
class Assignment:
    """Per-token attention over the bank; `a` is (..., K, T), columns sum to 1."""

    a: torch.Tensor
    mode: str


def compute_logits(weights: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    """Raw dot-product affinity of every prototype to every token, no normalization.

    weights: (K, D), tokens: (..., T, D) -> logits (..., K, T).
    """
    if weights.shape[-1] != tokens.shape[-1]:
        raise ValueError(
            f"prototype dim {weights.shape[-1]} does not match token dim {tokens.shape[-1]}"
        )
    return weights @ tokens.transpose(-2, -1)


def gumbel_from_uniform(u: torch.Tensor) -> torch.Tensor:
    """Map uniform(0,1) draws through the Gumbel(0,1) inverse CDF."""
    return -torch.log(-torch.log(u))


def gumbel_noise(shape, generator: torch.Generator,
                 dtype: torch.dtype = torch.float32) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    # keep u strictly inside (0, 1) so both logs stay finite
    tiny = torch.finfo(dtype).tiny
    return gumbel_from_uniform(u.clamp(min=tiny))


def sample_gumbel(rows: int, cols: int, generator: torch.Generator,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    if rows < 1 or cols < 1:
        raise ValueError(f"gumbel sample shape must be positive, got {rows}x{cols}")
    return gumbel_noise((rows, cols), generator, dtype)


def _noisy_logits(logits: torch.Tensor, noise: torch.Tensor | None) -> torch.Tensor:
    if not torch.isfinite(logits).all():
        raise ValueError("assignment logits contain non-finite entries")
    if noise is None:
        return logits
    if noise.shape != logits.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match logits shape "
                         f"{tuple(logits.shape)}")
    return logits + noise


def soft_assign(logits: torch.Tensor, noise: torch.Tensor | None = None) -> Assignment:
    """Columnwise softmax over the K prototypes (torch subtracts the per-column max)."""
    x = _noisy_logits(logits, noise)
    return Assignment(torch.softmax(x / TEMPERATURE, dim=-2), SOFT)


def hard_assign(logits: torch.Tensor, noise: torch.Tensor | None = None) -> Assignment:
    """One-hot at the columnwise argmax; gradients flow through the soft relaxation.

    Ties resolve to the lowest prototype index (torch argmax returns the first
    maximal entry). The forward value is an exact one-hot; the backward pass is
    the straight-through estimator evaluated at the same noisy logits.
    """
    x = _noisy_logits(logits, noise)
    soft = torch.softmax(x / TEMPERATURE, dim=-2)
    index = x.argmax(dim=-2, keepdim=True)
    one_hot = torch.zeros_like(soft).scatter_(-2, index, 1.0)
    if soft.requires_grad:
        one_hot = one_hot + soft - soft.detach()
    return Assignment(one_hot, HARD)


def project(assignment: Assignment, weights: torch.Tensor) -> torch.Tensor:
    """Token embeddings as combinations of prototypes: z_hat = a^T . weights.

    In hard mode (outside of autograd) each token row is substituted by its
    assigned bank row via indexing, so rows are bit-identical bank members.
    """
    a = assignment.a
    if a.shape[-2] != weights.shape[0]:
        raise ValueError(
            f"assignment has {a.shape[-2]} prototypes but bank has {weights.shape[0]}"
        )
    if assignment.mode == HARD and not a.requires_grad:
        return weights[a.argmax(dim=-2)]
    return a.transpose(-2, -1) @ weights


def assign_tokens(weights: torch.Tensor, tokens: torch.Tensor, mode: str,
                  generator: torch.Generator | None = None,
                  noisy: bool = True) -> tuple[torch.Tensor, Assignment]:
    """Full pass: logits -> (gumbel-)softmax assignment -> prototype embeddings.

    `noisy=False` gives the deterministic inference path (plain softmax /
    pure argmax). There is no constraint on how often a prototype is assigned.
    """
    if mode not in (SOFT, HARD):
        raise ValueError(f"mode must be '{SOFT}' or '{HARD}', got {mode!r}")
    logits = compute_logits(weights, tokens)
    noise = None
    if noisy:
        if generator is None:
            raise ValueError("a seeded generator is required when noise is enabled")
        noise = gumbel_noise(logits.shape, generator, dtype=logits.dtype)
    assignment = soft_assign(logits, noise) if mode == SOFT else hard_assign(logits, noise)
    return project(assignment, weights), assignment


class PrototypeLayer(torch.nn.Module):
    """Learnable bank of `num_prototypes` D-dimensional concept vectors."""

    def __init__(self, num_prototypes: int, dim: int,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.num_prototypes = num_prototypes
        self.dim = dim
        self.weights = torch.nn.Parameter(init_bank(num_prototypes, dim, generator))

    def forward(self, tokens: torch.Tensor, mode: str,
                generator: torch.Generator | None = None,
                noisy: bool = True) -> tuple[torch.Tensor, Assignment]:
        return assign_tokens(self.weights, tokens, mode, generator, noisy)
