##############################################################################
# Copyright© 2025 UT-Battelle, LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################
"""
Episode logs and the six tracking metrics used to compare controllers:

- E: mechanical work magnitude, sum_t sum_i |tau_i q'_i| dt  [J]
- RMSE: root mean square joint error over all samples and joints  [rad]
- MIE: mean over joints of the integral of |e_i| dt  [rad s]
- MSSE: mean over joints of mean |e_i| over the final window  [rad]
- OS: max over stepped joints of the peak excursion past the reference,
  as a percentage of the step size  [%]
- ST: max over joints of the time after which |e_i| stays in the band  [s]

Row k of a log holds the state at t_k = k dt, the torque applied over
[t_k, t_k + dt) and the reward of that transition.  An episode of N steps
logs the N states t_0 .. t_{N-1}; the state reached at t_N = N dt is not a
row, so the metrics see the state at the start of each interval.  The
reference step of joint i is q_req_i - q_i[0].  Integrals use the rectangle
rule at dt.
"""
from dataclasses import dataclass, field, fields
import logging
import os

import numpy as np

from uwarm_py.errors import MetricsError

logger = logging.getLogger(__name__)

try:
    import matplotlib
    from matplotlib.figure import Figure
    HAS_MATPLOTLIB = True
except ImportError:
    HAS_MATPLOTLIB = False


def _rows(a, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    # single joint series may come in flat
    if a.ndim == 1 and n > 0:
        a = a.reshape(n, -1)
    return a


@dataclass
class EpisodeLog:
    """
    Time indexed record of one episode, host side numpy arrays.  Rows are
    the pre step states, duration is len * dt.
    """
    dt: float
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau_applied: np.ndarray
    q_req: np.ndarray
    reward: np.ndarray
    violated: bool = False
    torque_limits: np.ndarray = None
    # per step solver diagnostics of model based controllers
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise MetricsError(f"log dt must be positive, got {self.dt}")
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        n = self.t.shape[0]
        self.q = _rows(self.q, n)
        self.qdot = _rows(self.qdot, n)
        self.tau_applied = _rows(self.tau_applied, n)
        self.q_req = np.asarray(self.q_req, dtype=np.float64).reshape(-1)
        self.reward = np.asarray(self.reward, dtype=np.float64).reshape(n)
        if self.torque_limits is not None:
            self.torque_limits = np.asarray(self.torque_limits, dtype=np.float64)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def n_joints(self) -> int:
        return self.q.shape[1]

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @property
    def error(self) -> np.ndarray:
        return self.q - self.q_req[None, :]

    @property
    def step_size(self) -> np.ndarray:
        return self.q_req - self.q[0]


@dataclass
class MetricsReport:
    E: float
    RMSE: float
    MIE: float
    MSSE: float
    OS: float
    ST: float
    never_settled: bool = False

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_NAMES = ("E", "RMSE", "MIE", "MSSE", "OS", "ST")


def _nonempty(log: EpisodeLog):
    if log is None or len(log) == 0:
        raise MetricsError("empty log")


def energy(log: EpisodeLog) -> float:
    _nonempty(log)
    return float(np.sum(np.abs(log.tau_applied * log.qdot)) * log.dt)


def rmse(log: EpisodeLog) -> float:
    _nonempty(log)
    return float(np.sqrt(np.mean(log.error**2)))


def mie(log: EpisodeLog) -> float:
    _nonempty(log)
    return float(np.mean(np.sum(np.abs(log.error), axis=0) * log.dt))


def msse(log: EpisodeLog, window: float=2.0) -> float:
    """
    Mean absolute error over the final window [s], averaged over joints.
    """
    _nonempty(log)
    n_win = min(len(log), max(1, int(round(window / log.dt))))
    return float(np.mean(np.mean(np.abs(log.error[-n_win:]), axis=0)))


def overshoot(log: EpisodeLog, min_step: float=0.01) -> float:
    """
    Peak excursion beyond q_req in the step direction, percent of |step|,
    max over joints with |step| > min_step.  Zero when no joint steps.
    """
    _nonempty(log)
    step = log.step_size
    moving = np.abs(step) > min_step
    if not np.any(moving):
        return 0.0
    excursion = np.max(log.error * np.sign(step)[None, :], axis=0)
    os_joint = 100. * np.maximum(0., excursion) / np.where(moving, np.abs(step), 1.)
    return float(np.max(os_joint[moving]))


def settling_times(log: EpisodeLog, band: float=0.02, floor: float=0.01) -> np.ndarray:
    """
    Per joint settling time: earliest t_k after which |e_i| stays within
    max(band*|step_i|, floor).  NaN when the last sample is still outside.
    """
    _nonempty(log)
    tol = np.maximum(band * np.abs(log.step_size), floor)
    outside = np.abs(log.error) > tol[None, :]
    n = len(log)
    st = np.zeros(log.n_joints)
    for i in range(log.n_joints):
        idx = np.flatnonzero(outside[:, i])
        if idx.size == 0:
            continue
        last = idx[-1]
        st[i] = np.nan if last == n - 1 else (last + 1) * log.dt
    return st


def settling_time(log: EpisodeLog, band: float=0.02, floor: float=0.01) -> float:
    """
    Max over joints of the settling time.  A joint that never settles
    counts as the full episode duration, see :func:`never_settled`.
    """
    st = settling_times(log, band, floor)
    return float(np.max(np.where(np.isnan(st), log.duration, st)))


def never_settled(log: EpisodeLog, band: float=0.02, floor: float=0.01) -> bool:
    return bool(np.any(np.isnan(settling_times(log, band, floor))))


def compute_report(log: EpisodeLog, **kwargs) -> MetricsReport:
    """
    All six metrics of a log.

    Args:
        log: episode log
        msse_window: tail window [s], default 2.0
        settle_band: settling band fraction of |step|, default 0.02
        settle_floor: settling band floor [rad], default 0.01
        min_step: smallest step counted by the overshoot [rad], default 0.01
    """
    window = kwargs.get("msse_window", 2.0)
    band = kwargs.get("settle_band", 0.02)
    floor = kwargs.get("settle_floor", 0.01)
    return MetricsReport(
        E=energy(log),
        RMSE=rmse(log),
        MIE=mie(log),
        MSSE=msse(log, window),
        OS=overshoot(log, kwargs.get("min_step", 0.01)),
        ST=settling_time(log, band, floor),
        never_settled=never_settled(log, band, floor),
    )


def mean_report(reports) -> MetricsReport:
    reports = list(reports)
    if len(reports) == 0:
        raise MetricsError("no reports to average")
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_NAMES}
    return MetricsReport(**vals, never_settled=any(r.never_settled for r in reports))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def csv_header(n_joints: int=4) -> list:
    cols = ["t"]
    for prefix in ("q", "qd", "tau", "ref"):
        cols += [f"{prefix}{i+1}" for i in range(n_joints)]
    return cols + ["reward"]


def write_csv(log: EpisodeLog, path: str):
    """
    One row per control step, 17 significant digits so floats round trip.
    """
    _nonempty(log)
    n = len(log)
    data = np.column_stack([
        log.t, log.q, log.qdot, log.tau_applied,
        np.broadcast_to(log.q_req, (n, log.n_joints)), log.reward])
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=",".join(csv_header(log.n_joints)), comments="")


def read_csv(path: str, dt: float=None, violation_penalty: float=-10.0) -> EpisodeLog:
    """
    Inverse of :func:`write_csv`.  dt defaults to t[1] - t[0], the
    violation flag is recovered from rewards at the penalty value.
    """
    if not os.path.exists(path):
        raise MetricsError(f"no such log: {path}")
    with open(path) as f:
        cols = f.readline().strip().split(",")
    n_joints = (len(cols) - 2) // 4
    if cols != csv_header(n_joints):
        raise MetricsError(f"unexpected csv header in {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0:
        raise MetricsError("empty log")
    if dt is None:
        if data.shape[0] < 2:
            raise MetricsError("cannot infer dt from a single row, pass dt")
        dt = float(data[1, 0] - data[0, 0])
    j = n_joints
    reward = data[:, -1]
    return EpisodeLog(
        dt=dt, t=data[:, 0], q=data[:, 1:1+j], qdot=data[:, 1+j:1+2*j],
        tau_applied=data[:, 1+2*j:1+3*j], q_req=data[0, 1+3*j:1+4*j],
        reward=reward, violated=bool(np.any(reward <= violation_penalty)))


def write_report(report: MetricsReport, path: str):
    """
    Flat ``key = value`` text file.
    """
    with open(path, "w") as f:
        for k in METRIC_NAMES:
            f.write(f"{k} = {getattr(report, k):.17g}\n")
        f.write(f"never_settled = {str(report.never_settled).lower()}\n")


def read_report(path: str) -> MetricsReport:
    vals = {}
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            k, v = [s.strip() for s in line.split("=", 1)]
            vals[k] = v
    try:
        out = {k: float(vals[k]) for k in METRIC_NAMES}
        return MetricsReport(**out, never_settled=vals.get("never_settled", "false") == "true")
    except KeyError as e:
        raise MetricsError(f"report {path} misses key {e}")


def format_comparison_table(rows) -> str:
    """
    Fixed width table, one row per (label, MetricsReport).
    """
    heads = ["Controller", "E [J]", "RMSE", "MIE", "MSSE", "OS [%]", "ST [s]"]
    lines = ["".join(f"{h:>12s}" if i else f"{h:<12s}" for i, h in enumerate(heads))]
    for label, rep in rows:
        vals = [getattr(rep, k) for k in METRIC_NAMES]
        lines.append(f"{label:<12s}" + "".join(f"{v:>12.4g}" for v in vals))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

_SVG_RC = {"svg.hashsalt": "uwarm", "svg.fonttype": "path"}


def _save_svg(fig, path):
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})


def render_plots(log: EpisodeLog, prefix: str) -> list:
    """
    Write joint position, torque and error figures as SVG plus the raw
    CSV, named ``<prefix>_positions.svg`` etc.  Returns the file paths.
    """
    _nonempty(log)
    if not HAS_MATPLOTLIB:
        raise ImportError("render_plots requires matplotlib, install uwarm_py[plot]")
    paths = []
    labels = [f"joint {i+1}" for i in range(log.n_joints)]

    fig = Figure(figsize=(8, 5))
    ax = fig.add_subplot()
    for i in range(log.n_joints):
        line, = ax.plot(log.t, log.q[:, i], label=labels[i])
        ax.axhline(log.q_req[i], ls="--", lw=0.8, color=line.get_color())
    ax.set_xlabel("time [s]")
    ax.set_ylabel("joint position [rad]")
    ax.legend()
    paths.append(f"{prefix}_positions.svg")
    _save_svg(fig, paths[-1])

    fig = Figure(figsize=(8, 5))
    ax = fig.add_subplot()
    for i in range(log.n_joints):
        line, = ax.step(log.t, log.tau_applied[:, i], where="post", label=labels[i])
        if log.torque_limits is not None:
            ax.axhline(log.torque_limits[i], ls=":", lw=0.8, color=line.get_color())
            ax.axhline(-log.torque_limits[i], ls=":", lw=0.8, color=line.get_color())
    ax.set_xlabel("time [s]")
    ax.set_ylabel("torque output [N m]")
    ax.legend()
    paths.append(f"{prefix}_torques.svg")
    _save_svg(fig, paths[-1])

    fig = Figure(figsize=(8, 5))
    ax = fig.add_subplot()
    for i in range(log.n_joints):
        ax.plot(log.t, log.error[:, i], label=labels[i])
    ax.set_xlabel("time [s]")
    ax.set_ylabel("joint error [rad]")
    ax.legend()
    paths.append(f"{prefix}_errors.svg")
    _save_svg(fig, paths[-1])

    paths.append(f"{prefix}.csv")
    write_csv(log, paths[-1])
    return paths
