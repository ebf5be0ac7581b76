# bounds.py
"""
有限样本界的数值求值 (只求值，不涉及证明)。

    Err ≤ (1/Σα)[A + BΣα² + CτΣα² + FηΣα + Hτ + 8DL₁√(2τ log(τ/δ)(Σα² + τα₀))]
    A = D², B = 5/2·L₁², C = 6L₁² + 2L₁L₂D, F = 2L₁D, H = 6L₁Dα₀

期望界 (lemma1) 去掉最后一项。GTD 的价值误差只给出阶 (常数取 1)，
输出统一称为 "order value"，不叫 "bound"。
"""
import math
import logging
from dataclasses import dataclass
from typing import Callable, Mapping

from utils import ConfigError, AssumptionViolation
from saddle_core import StepSchedule

# η 网格: 2⁻¹ … 2⁻²⁰
ETA_GRID = tuple(2.0 ** -k for k in range(1, 21))


@dataclass(frozen=True)
class BoundInputs:
    D: float
    L1: float
    L2: float
    schedule: StepSchedule
    T: int
    tau: int = 0
    eta: float = 0.0
    delta: float = 0.05
    alpha0: float | None = None

    def __post_init__(self):
        for name in ('D', 'L1', 'L2'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} 必须为正: {getattr(self, name)}")
        if self.T < 1:
            raise ConfigError(f"T 必须 ≥ 1: {self.T}")
        if self.tau < 0 or int(self.tau) != self.tau:
            raise ConfigError(f"τ 必须是非负整数: {self.tau}")
        if self.eta < 0:
            raise ConfigError(f"η 必须非负: {self.eta}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"δ 必须在 (0, 1) 内: {self.delta}")
        if self.tau > self.T / 2:
            raise AssumptionViolation(f"需要 τ(η) ≤ T/2，得到 τ={self.tau}, T={self.T}")
        if self.alpha0 is None:
            object.__setattr__(self, 'alpha0', self.schedule.alpha0)
        elif not self.alpha0 > 0:
            raise ConfigError(f"α₀ 必须为正: {self.alpha0}")
        object.__setattr__(self, 'tau', int(self.tau))


@dataclass(frozen=True)
class BoundConstants:
    A: float
    B: float
    C: float
    F: float
    H: float


def bound_constants(inputs: BoundInputs) -> BoundConstants:
    D, L1, L2 = inputs.D, inputs.L1, inputs.L2
    return BoundConstants(
        A=D * D,
        B=2.5 * L1 * L1,
        C=6.0 * L1 * L1 + 2.0 * L1 * L2 * D,
        F=2.0 * L1 * D,
        H=6.0 * L1 * D * inputs.alpha0,
    )


@dataclass(frozen=True)
class BoundTerms:
    """各加性项 (尚未除以 Σα)。"""
    a: float
    b: float
    c: float
    f: float
    h: float
    deviation: float
    weight_sum: float

    @property
    def expectation_total(self) -> float:
        return (self.a + self.b + self.c + self.f + self.h) / self.weight_sum

    @property
    def total(self) -> float:
        return (self.a + self.b + self.c + self.f + self.h + self.deviation) / self.weight_sum

    def as_dict(self) -> dict:
        return {'A': self.a, 'B': self.b, 'C': self.c, 'F': self.f, 'H': self.h,
                'deviation': self.deviation, 'sum_alpha': self.weight_sum}


def theorem1_terms(inputs: BoundInputs) -> BoundTerms:
    k = bound_constants(inputs)
    sum_a, sum_a2 = inputs.schedule.sums(inputs.T)
    tau = inputs.tau
    if tau == 0:
        deviation = 0.0
    else:
        deviation = 8.0 * inputs.D * inputs.L1 * math.sqrt(
            2.0 * tau * math.log(tau / inputs.delta) * (sum_a2 + tau * inputs.alpha0))
    return BoundTerms(
        a=k.A,
        b=k.B * sum_a2,
        c=k.C * tau * sum_a2,
        f=k.F * inputs.eta * sum_a,
        h=k.H * tau,
        deviation=deviation,
        weight_sum=sum_a,
    )


def theorem1_bound(inputs: BoundInputs) -> float:
    """以概率 1 − δ 成立的间隙上界。"""
    return theorem1_terms(inputs).total


def lemma1_bound(inputs: BoundInputs) -> float:
    """期望间隙上界。"""
    return theorem1_terms(inputs).expectation_total


@dataclass(frozen=True)
class EtaChoice:
    eta: float
    tau: int
    value: float


def minimize_over_eta(make_inputs: Callable[[float, int], BoundInputs], tau_table: Mapping[float, int], T: int,
                      bound: Callable[[BoundInputs], float] = lemma1_bound) -> EtaChoice | None:
    """
    在 η 网格上取界的最小值，跳过 τ(η) > T/2 的 η。
    没有可用的 η 时返回 None (由调用方标记该行)。
    """
    best = None
    for eta in sorted(tau_table, reverse=True):
        tau = tau_table[eta]
        if tau > T / 2:
            continue
        value = bound(make_inputs(eta, tau))
        if best is None or value < best.value:
            best = EtaChoice(eta, tau, value)
    return best


# --- GTD 常数 ---
@dataclass(frozen=True)
class GtdConstants:
    gamma: float
    rho_max: float
    L: float
    d: int
    R_max: float
    lambda_M: float
    lambda_C: float
    nu_C: float
    nu_AMA: float
    pi_max: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"γ 必须在 (0, 1) 内: {self.gamma}")
        for name in ('rho_max', 'lambda_M', 'lambda_C', 'nu_C', 'nu_AMA'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} 必须为正: {getattr(self, name)}")
        for name in ('L', 'R_max'):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} 必须非负: {getattr(self, name)}")
        if self.d < 1:
            raise ConfigError(f"d 必须 ≥ 1: {self.d}")
        if not 0.0 < self.pi_max <= 1.0:
            raise ConfigError(f"π_max 必须在 (0, 1] 内: {self.pi_max}")


def proposition1_constants(constants: GtdConstants, D: float) -> tuple[float, float]:
    """GTD 目标函数的 (L₁, L₂) 上界。"""
    c = constants
    a_norm = (1.0 + c.gamma) * c.rho_max * c.L ** 2 * c.d
    L1 = math.sqrt(2.0) * (2.0 * D * a_norm + c.rho_max * c.L * c.R_max + c.lambda_M)
    L2 = math.sqrt(2.0) * (2.0 * a_norm + c.lambda_M)
    return L1, L2


def rate_orders(schedule: StepSchedule, T: int) -> tuple[float, float]:
    """o₁(T) = Σα²/Σα, o₂(T) = √(Σα²)/Σα。"""
    sum_a, sum_a2 = schedule.sums(T)
    return sum_a2 / sum_a, math.sqrt(sum_a2) / sum_a


@dataclass(frozen=True)
class Theorem2Order:
    value: float
    o1: float
    o2: float
    dominant: str


def theorem2_order(constants: GtdConstants, schedule: StepSchedule, T: int, tau: int, delta: float = 0.05,
                   mode: str = 'on', kind: str = 'expectation') -> Theorem2Order:
    """
    ‖V − ṽ‖_π 的阶 (绝对常数取 1)。
    高概率形式中 Σα² > 1 时 o₁ 主导，否则 o₂ 主导。
    """
    if mode not in ('on', 'off'):
        raise ConfigError(f"mode 必须是 on/off: {mode}")
    if kind not in ('expectation', 'highprob'):
        raise ConfigError(f"kind 必须是 expectation/highprob: {kind}")
    if tau < 0:
        raise ConfigError(f"τ 必须非负: {tau}")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"δ 必须在 (0, 1) 内: {delta}")
    c = constants
    o1, o2 = rate_orders(schedule, T)
    _, sum_a2 = schedule.sums(T)
    mixing = 1.0 + tau
    deviation = 0.0 if tau == 0 else math.sqrt(tau * math.log(tau / delta))

    if mode == 'on':
        if kind == 'expectation':
            value = c.L * math.sqrt(c.L ** 4 * c.d ** 3 * c.lambda_M * c.pi_max * mixing * o1) / c.nu_C
        else:
            value = (math.sqrt(c.L ** 4 * c.d ** 2 * c.lambda_M * c.pi_max) / c.nu_C
                     * math.sqrt(mixing * c.L ** 2 * c.d * o1 + deviation * o2))
    else:
        prefactor = math.sqrt(2.0 * c.lambda_C * c.lambda_M * c.pi_max)
        if kind == 'expectation':
            value = c.L ** 2 * c.d * prefactor * math.sqrt(mixing * o1) / c.nu_AMA
        else:
            value = prefactor / c.nu_AMA * math.sqrt(c.L ** 4 * c.d ** 2 * mixing * o1 + deviation * o2)
    return Theorem2Order(value, o1, o2, 'o1' if sum_a2 > 1.0 else 'o2')


def value_error_from_gap(constants: GtdConstants, gap: float, mode: str = 'on',
                         representation_error: float = 0.0) -> float:
    """由间隙推出的价值误差上界；表格特征时表示误差 ‖V − ΠV‖_π 为 0。"""
    c = constants
    gap = max(gap, 0.0)
    if mode == 'on':
        return (representation_error
                + c.L / c.nu_C * math.sqrt(2.0 * c.d * c.lambda_M * c.pi_max * gap)) / (1.0 - c.gamma)
    if mode == 'off':
        return ((1.0 + c.gamma * math.sqrt(c.rho_max)) / (1.0 - c.gamma) * representation_error
                + math.sqrt(2.0 * c.lambda_C * c.lambda_M * c.pi_max / c.nu_AMA * gap))
    raise ConfigError(f"mode 必须是 on/off: {mode}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    for label in ('constant:0.001', 'inv_sqrt:0.015', 'inv:0.03'):
        schedule = StepSchedule.parse(label)
        for T in (10 ** 3, 10 ** 5, 10 ** 7):
            inputs = BoundInputs(D=1.0, L1=1.0, L2=1.0, schedule=schedule, T=T, tau=7, eta=0.01)
            print(f"{label:>15} T={T:>9}: theorem1={theorem1_bound(inputs):.4g}, lemma1={lemma1_bound(inputs):.4g}")
