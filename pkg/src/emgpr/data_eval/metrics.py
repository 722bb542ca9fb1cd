import numpy as np

from .preprocess import inverse_transform

__all__ = ["evaluate"]


def evaluate(pred_means, truth, records=None, task_names=None):
    """MAE and MSE in the original data space.

    ``pred_means`` are in the normalized space described by ``records``
    (``None`` means no transform). ``truth`` is in the original space;
    ``NaN`` truth entries are not scored. ``overall`` pools every scored
    (point, task) pair.
    """
    pred = np.asarray(pred_means, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.ndim == 1:
        pred = pred[:, None]
    if truth.ndim == 1:
        truth = truth[:, None]
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    if records is not None:
        if len(records) != pred.shape[1]:
            raise ValueError(f"{len(records)} normalization records for {pred.shape[1]} tasks")
        pred = inverse_transform(pred, records)
    names = list(task_names) if task_names else [f"task{d}" for d in range(pred.shape[1])]

    err = pred - truth
    scored = ~np.isnan(truth)
    per_task = {}
    for d, name in enumerate(names):
        e = err[scored[:, d], d]
        if e.size:
            per_task[name] = {"MAE": float(np.mean(np.abs(e))), "MSE": float(np.mean(e**2)), "n": int(e.size)}
    e = err[scored]
    overall = {"MAE": float(np.mean(np.abs(e))), "MSE": float(np.mean(e**2)), "n": int(e.size)}
    return {"per_task": per_task, "overall": overall}
