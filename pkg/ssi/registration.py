"""Sub-pixel translation estimation by forward-additive Gauss-Newton descent.

``p`` maps template coordinates into the warped image,
``W(x; p) = (x + p1, y + p2)``, and minimizes ``Σ [I(W(x; p)) - T(x)]²``.
The warped image is sampled with clamped bilinear interpolation and the
descent uses that interpolant's exact derivative, so every Gauss-Newton step
is a step on the objective that is actually evaluated.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from models.processing import RegistrationOptions
from ssi.errors import InvalidArgumentError, SingularHessianError, SSIError
from ssi.types import GradientField, Image, LowResStack, ShiftEstimate, WarpParams

logger = logging.getLogger(__name__)

# Accepted steps may raise the objective by at most this fraction.
_MONOTONE_SLACK = 1e-9
_MAX_HALVINGS = 8
_SINGULAR_RATIO = 1e-12


def image_gradient(img: Image) -> GradientField:
    """Central differences inside, one-sided differences on the border."""
    if img.width < 3 or img.height < 3:
        raise InvalidArgumentError(f"gradient needs at least 3x3 pixels, got {img.height}x{img.width}")
    gy, gx = np.gradient(img.pixels)
    return GradientField(gx=gx, gy=gy)


def _check_pair(warped: Image, template: Image, opts: RegistrationOptions) -> None:
    if warped.shape != template.shape:
        raise InvalidArgumentError(
            f"warped image is {warped.shape}, template is {template.shape}"
        )
    margin = opts.border_margin
    if template.height - 2 * margin < 1 or template.width - 2 * margin < 1:
        raise InvalidArgumentError(f"border margin {margin} leaves no pixels to compare")


def _region(shape: Tuple[int, int], margin: int) -> Tuple[slice, slice]:
    return slice(margin, shape[0] - margin), slice(margin, shape[1] - margin)


def _taps(length: int, offset: float) -> Tuple[np.ndarray, np.ndarray, float]:
    whole, frac = divmod(offset, 1.0)
    low = np.arange(length) + int(whole)
    return np.clip(low, 0, length - 1), np.clip(low + 1, 0, length - 1), float(frac)


def _sample(pixels: np.ndarray, p: WarpParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``I(x + p)`` with edge clamping and its derivatives with respect to ``p1`` and ``p2``."""
    r0, r1, fy = _taps(pixels.shape[0], p.p2)
    c0, c1, fx = _taps(pixels.shape[1], p.p1)
    a = pixels[np.ix_(r0, c0)]
    b = pixels[np.ix_(r0, c1)]
    c = pixels[np.ix_(r1, c0)]
    d = pixels[np.ix_(r1, c1)]
    values = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    gx = (1 - fy) * (b - a) + fy * (d - c)
    gy = (1 - fx) * (c - a) + fx * (d - b)
    return values, gx, gy


def _normalize(values: np.ndarray) -> Tuple[np.ndarray, float]:
    """Zero-mean, unit-RMS copy and the RMS it was divided by (0 for flat input)."""
    centered = values - values.mean()
    rms = float(np.sqrt(np.mean(centered**2)))
    if rms == 0.0:
        return centered, 0.0
    return centered / rms, rms


def _normalized_jacobian(z: np.ndarray, rms: float, jacobian: np.ndarray) -> np.ndarray:
    """Chain rule through ``z = (m - mean m) / rms(m)`` for a ``(2, n)`` Jacobian of ``m``."""
    if rms == 0.0:
        return np.zeros_like(jacobian)
    centered = jacobian - jacobian.mean(axis=1, keepdims=True)
    return (centered - np.outer(centered @ z, z) / z.size) / rms


def _residual_terms(
    warped: Image, template: Image, p: WarpParams, opts: RegistrationOptions
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``I(W(x; p))``, its ``(2, n)`` Jacobian and ``T``, flattened over the summation region."""
    region = _region(template.shape, opts.border_margin)
    values, gx, gy = _sample(warped.pixels, p)
    moving = values[region].ravel()
    jacobian = np.stack((gx[region].ravel(), gy[region].ravel()))
    fixed = template.pixels[region].ravel()
    if opts.normalize:
        moving, rms = _normalize(moving)
        fixed, _ = _normalize(fixed)
        jacobian = _normalized_jacobian(moving, rms, jacobian)
    return moving, jacobian, fixed


def objective(
    warped: Image, template: Image, p: WarpParams, opts: Optional[RegistrationOptions] = None
) -> float:
    """``O(p) = Σ [I(W(x; p)) - T(x)]²`` over pixels at least ``border_margin`` from the edge."""
    opts = opts or RegistrationOptions()
    _check_pair(warped, template, opts)
    region = _region(template.shape, opts.border_margin)
    moving = _sample(warped.pixels, p)[0][region]
    fixed = template.pixels[region]
    if opts.normalize:
        moving, _ = _normalize(moving)
        fixed, _ = _normalize(fixed)
    return float(np.sum((moving - fixed) ** 2))


def sd_update(
    warped: Image, template: Image, p_tilde: WarpParams, opts: Optional[RegistrationOptions] = None
) -> Tuple[WarpParams, np.ndarray]:
    """One steepest-descent step; returns ``Δp`` and the 2x2 Hessian."""
    opts = opts or RegistrationOptions()
    _check_pair(warped, template, opts)
    # The translation warp Jacobian is the identity, so the steepest-descent
    # images are the derivatives of the resampled (and normalized) image.
    moving, sd, fixed = _residual_terms(warped, template, p_tilde, opts)
    hessian = sd @ sd.T
    det = float(np.linalg.det(hessian))
    trace = float(np.trace(hessian))
    if det <= _SINGULAR_RATIO * (trace / 2) ** 2:
        raise SingularHessianError(
            f"Hessian is singular (det={det:.3g}, trace={trace:.3g}); image lacks texture"
        )
    delta = np.linalg.solve(hessian, sd @ (fixed - moving))
    return WarpParams.from_array(delta), hessian


def prefilter(img: Image, sigma: float) -> Image:
    """Gaussian-smoothed copy used for registration; ``sigma == 0`` returns ``img``."""
    if sigma == 0:
        return img
    return img.with_pixels(ndimage.gaussian_filter(img.pixels, sigma, mode="nearest"))


def estimate_shift(
    warped: Image, template: Image, opts: Optional[RegistrationOptions] = None
) -> ShiftEstimate:
    """Iterate ``p ← p + Δp`` from ``p = 0`` until ``|Δp| < ε``.

    Both images are smoothed by ``opts.prefilter_sigma`` first and
    ``final_objective`` is measured on the smoothed pair. A step that would
    raise the objective is halved. If no halving helps, ``p`` is already a
    minimum to within the last step tried, and the estimate counts as
    converged when that step is below ``ε``.
    """
    opts = opts or RegistrationOptions()
    _check_pair(warped, template, opts)
    warped = prefilter(warped, opts.prefilter_sigma)
    template = prefilter(template, opts.prefilter_sigma)
    p = np.zeros(2)
    current = objective(warped, template, WarpParams(), opts)
    iterations = 0
    update_norm = np.inf
    converged = False

    for iteration in range(1, opts.max_iterations + 1):
        delta, _ = sd_update(warped, template, WarpParams.from_array(p), opts)
        step = delta.as_array()
        update_norm = float(np.linalg.norm(step))
        small = update_norm < opts.epsilon

        for _ in range(_MAX_HALVINGS + 1):
            candidate = p + step
            value = objective(warped, template, WarpParams.from_array(candidate), opts)
            if value <= current * (1 + _MONOTONE_SLACK):
                break
            tried = float(np.linalg.norm(step))
            step = step / 2
        else:
            update_norm = tried
            converged = tried < opts.epsilon
            logger.debug("no descent step at iteration %d (last |Δp|=%.3g)", iteration, tried)
            break

        p, current, iterations = candidate, value, iteration
        logger.debug("iteration %d: p=(%.5f, %.5f) O=%.6g", iteration, p[0], p[1], current)
        if small:
            converged = True
            break

    return ShiftEstimate(
        p=WarpParams.from_array(p),
        iterations=iterations,
        final_update_norm=update_norm,
        converged=converged,
        final_objective=current,
    )


def _failed_estimate() -> ShiftEstimate:
    return ShiftEstimate(
        p=WarpParams(), iterations=0, final_update_norm=np.inf, converged=False,
        final_objective=np.inf,
    )


def estimate_stack_shifts(
    stack: LowResStack, opts: Optional[RegistrationOptions] = None, workers: int = 1
) -> List[ShiftEstimate]:
    """Shift of every frame relative to the template frame, in frame order."""
    opts = opts or RegistrationOptions()
    template = stack.template

    def estimate(index: int) -> ShiftEstimate:
        if index == stack.template_index:
            return ShiftEstimate(
                p=WarpParams(), iterations=0, final_update_norm=0.0, converged=True,
                final_objective=0.0,
            )
        try:
            return estimate_shift(stack.frames[index], template, opts)
        except SSIError as exc:
            logger.warning("frame %d: %s", index, exc.detail)
            return _failed_estimate()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(estimate, range(len(stack))))
    else:
        estimates = [estimate(index) for index in range(len(stack))]

    failed = sum(not e.converged for e in estimates)
    if failed:
        logger.warning("%d of %d frames did not converge", failed, len(estimates))
    logger.info("registered %d frames against template %d", len(estimates), stack.template_index)
    return estimates
