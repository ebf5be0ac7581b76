# experiment_runner.py
"""
实验编排：配置解析、链的构造与诊断、实验格子的并行执行、CSV 与元数据写出。

输出目录结构 (以 figure1 为例):
    <out>/figure1/cells/<schedule>__<regime>__<replay|plain>.csv   每个格子一份, 含全部 seed
    <out>/figure1/mean.csv                                         seed = mean / stderr, 含 lemma1_bound
    <out>/figure1/metadata.json
    <out>/figure1/plots/*.svg                                      只从 CSV 渲染
"""
import json
import math
import time
import zlib
import logging
import configparser
from pathlib import Path
from dataclasses import dataclass, field, asdict, replace
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from utils import ConfigError, NumericError, parse_list, config_hash
from saddle_core import StepSchedule, default_checkpoints, run_sgd, product_diameter
from gap_metrics import make_simulation_problem, stochastic_problem, analytic_saddle, primal_dual_gap, lipschitz_constants
from markov_data import (FiniteChain, MixingTooSlowError, validate_distribution, tune_spectral_gap, mixing_time,
                         second_eigenvalue_modulus, make_stream, uniform_proposal, random_walk_proposal,
                         mixed_proposal, save_chain)
from gtd_eval import (FeatureMap, exact_instance_matrices, resolve_mdp, load_mdp_with_features, transition_chain,
                      gtd_saddle_problem, gtd_bilinear_problem, gtd_constants, value_error, objective)
from bounds import (ETA_GRID, BoundInputs, lemma1_bound, theorem1_bound, theorem1_terms, minimize_over_eta,
                    proposition1_constants, theorem2_order, value_error_from_gap)

SCHEMA_VERSION = 1
CSV_COLUMNS = ['t', 'metric', 'value', 'seed', 'regime', 'schedule', 'replay']
REPORT_ETAS = (0.1, 0.05, 0.01)
SMOKE_T = 1000
SMOKE_SEEDS = 2


# --- 配置 ---
@dataclass(frozen=True)
class RegimeSpec:
    name: str
    mode: str                      # 'markov' 或 'iid'
    target: float | None = None    # markov 时的 λ₂ 目标


@dataclass(frozen=True)
class Figure1Config:
    n: int = 10
    n_states: int = 1001
    pi: str = 'uniform'
    proposal: str = 'uniform'
    instance_seed: int = 0
    radius_x: float = 10.0
    radius_y: float = 10.0
    noise_scale: float = 5.0
    regimes: tuple[RegimeSpec, ...] = (RegimeSpec('slow', 'markov', 0.634),
                                       RegimeSpec('fast', 'markov', 0.31),
                                       RegimeSpec('iid', 'iid'))
    lambda_tolerance: float = 0.02
    schedules: tuple[str, ...] = ('constant:0.001', 'inv_sqrt:0.015', 'inv:0.03')
    replay: tuple[bool, ...] = (False, True)
    replay_capacity: int | None = None
    replay_warmup: int = 0
    T: int = 200_000
    n_checkpoints: int = 30
    seeds: tuple[int, ...] = tuple(range(20))
    delta: float = 0.05
    start: str = 'origin'


@dataclass(frozen=True)
class GtdConfig:
    mdp: str = 'walk5'
    mdp_seed: int = 0
    gamma: float | None = None
    features: str = 'tabular'
    modes: tuple[str, ...] = ('gtd', 'gtd2')
    policies: tuple[str, ...] = ('on', 'off')
    regimes: tuple[str, ...] = ('markov', 'iid')
    replay: tuple[bool, ...] = (False,)
    schedules: tuple[str, ...] = ('constant:0.2',)
    T: int = 100_000
    n_checkpoints: int = 30
    seeds: tuple[int, ...] = tuple(range(5))
    radius_x: float = 10.0
    radius_y: float = 10.0
    delta: float = 0.05


@dataclass(frozen=True)
class BoundsConfig:
    source: str = 'simulation'
    T_grid: tuple[int, ...] = (10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6, 10 ** 7)
    schedules: tuple[str, ...] = ('constant:0.001', 'inv_sqrt:0.015', 'inv:0.03')
    delta: float = 0.05


@dataclass(frozen=True)
class ChainConfig:
    n_states: int = 1001
    pi: str = 'uniform'
    proposal: str = 'uniform'
    target: float = 0.634
    tolerance: float = 0.02
    etas: tuple[float, ...] = REPORT_ETAS
    method: str = 'power'


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: Path = Path('./saddle_runs')
    workers: int = 1
    logging_level: str = 'INFO'
    figure1: Figure1Config = field(default_factory=Figure1Config)
    gtd: GtdConfig = field(default_factory=GtdConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"不是整数: {text}")
    return int(value)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"不是布尔值: {text}")


def _optional_float(text: str):
    return None if text.strip().lower() in ('', 'none') else float(text)


class _Section:
    """带 fallback 与 ConfigError 的小读取器。"""

    def __init__(self, config: configparser.ConfigParser, name: str):
        self.config = config
        self.name = name

    def _raw(self, key):
        raw = self.config.get(self.name, key, fallback=None)
        return None if raw is None or raw.strip() == '' else raw.strip()

    def get(self, key, cast, fallback):
        raw = self._raw(key)
        if raw is None:
            return fallback
        try:
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"[{self.name}] {key} = '{raw}' 无法解析: {e}") from e

    def get_list(self, key, cast, fallback):
        raw = self._raw(key)
        if raw is None:
            return tuple(fallback)
        return tuple(parse_list(raw, cast))


def _check_schedules(labels, section):
    for label in labels:
        StepSchedule.parse(label)
    if not labels:
        raise ConfigError(f"[{section}] 至少需要一个步长配置")


def load_experiment_config(config: configparser.ConfigParser, seed: int | None = None, smoke: bool = False,
                           out: str | None = None, workers: int | None = None) -> ExperimentConfig:
    """把 ConfigParser 解析成不可变的 ExperimentConfig，命令行参数覆盖配置文件。"""
    general = _Section(config, 'general')
    fig = _Section(config, 'figure1')
    gtd = _Section(config, 'gtd')
    bnd = _Section(config, 'bounds')
    chn = _Section(config, 'chain')

    slow = fig.get('lambda_slow', float, 0.634)
    fast = fig.get('lambda_fast', float, 0.31)
    known = {'slow': RegimeSpec('slow', 'markov', slow), 'fast': RegimeSpec('fast', 'markov', fast),
             'iid': RegimeSpec('iid', 'iid')}
    regime_names = fig.get_list('regimes', str, ('slow', 'fast', 'iid'))
    unknown = [name for name in regime_names if name not in known]
    if unknown:
        raise ConfigError(f"[figure1] 未知的数据模式: {unknown} (可选 slow, fast, iid)")

    f1_seeds = tuple(range(fig.get('seed_start', _parse_int, 0),
                           fig.get('seed_start', _parse_int, 0) + fig.get('n_seeds', _parse_int, 20)))
    gtd_seeds = tuple(range(gtd.get('seed_start', _parse_int, 0),
                            gtd.get('seed_start', _parse_int, 0) + gtd.get('n_seeds', _parse_int, 5)))

    figure1 = Figure1Config(
        n=fig.get('n', _parse_int, 10),
        n_states=fig.get('n_states', _parse_int, 1001),
        pi=fig.get('pi', str, 'uniform'),
        proposal=fig.get('proposal', str, 'uniform'),
        instance_seed=fig.get('instance_seed', _parse_int, 0),
        radius_x=fig.get('radius_x', float, 10.0),
        radius_y=fig.get('radius_y', float, 10.0),
        noise_scale=fig.get('noise_scale', float, 5.0),
        regimes=tuple(known[name] for name in regime_names),
        lambda_tolerance=fig.get('lambda_tolerance', float, 0.02),
        schedules=fig.get_list('schedules', str, Figure1Config.schedules),
        replay=fig.get_list('replay', _parse_bool, (False, True)),
        replay_capacity=fig.get('replay_capacity', _parse_int, None),
        replay_warmup=fig.get('replay_warmup', _parse_int, 0),
        T=fig.get('T', _parse_int, 200_000),
        n_checkpoints=fig.get('n_checkpoints', _parse_int, 30),
        seeds=f1_seeds,
        delta=fig.get('delta', float, 0.05),
        start=fig.get('start', str, 'origin'),
    )
    gtd_config = GtdConfig(
        mdp=gtd.get('mdp', str, 'walk5'),
        mdp_seed=gtd.get('mdp_seed', _parse_int, 0),
        gamma=gtd.get('gamma', _optional_float, None),
        features=gtd.get('features', str, 'tabular'),
        modes=gtd.get_list('modes', str, ('gtd', 'gtd2')),
        policies=gtd.get_list('policies', str, ('on', 'off')),
        regimes=gtd.get_list('regimes', str, ('markov', 'iid')),
        replay=gtd.get_list('replay', _parse_bool, (False,)),
        schedules=gtd.get_list('schedules', str, GtdConfig.schedules),
        T=gtd.get('T', _parse_int, 100_000),
        n_checkpoints=gtd.get('n_checkpoints', _parse_int, 30),
        seeds=gtd_seeds,
        radius_x=gtd.get('radius_x', float, 10.0),
        radius_y=gtd.get('radius_y', float, 10.0),
        delta=gtd.get('delta', float, 0.05),
    )
    bounds_config = BoundsConfig(
        source=bnd.get('source', str, 'simulation'),
        T_grid=bnd.get_list('T_grid', _parse_int, BoundsConfig.T_grid),
        schedules=bnd.get_list('schedules', str, BoundsConfig.schedules),
        delta=bnd.get('delta', float, 0.05),
    )
    chain_config = ChainConfig(
        n_states=chn.get('n_states', _parse_int, 1001),
        pi=chn.get('pi', str, 'uniform'),
        proposal=chn.get('proposal', str, 'uniform'),
        target=chn.get('target', float, 0.634),
        tolerance=chn.get('tolerance', float, 0.02),
        etas=chn.get_list('etas', float, REPORT_ETAS),
        method=chn.get('method', str, 'power'),
    )

    if seed is not None:
        figure1 = replace(figure1, seeds=(seed,))
        gtd_config = replace(gtd_config, seeds=(seed,))
    if smoke:
        figure1 = replace(figure1, T=SMOKE_T, seeds=figure1.seeds[:SMOKE_SEEDS])
        gtd_config = replace(gtd_config, T=SMOKE_T, seeds=gtd_config.seeds[:SMOKE_SEEDS])

    experiment = ExperimentConfig(
        out_dir=Path(out) if out else Path(general.get('out_dir', str, './saddle_runs')),
        workers=workers if workers is not None else general.get('workers', _parse_int, 1),
        logging_level=general.get('logging_level', str, 'INFO'),
        figure1=figure1, gtd=gtd_config, bounds=bounds_config, chain=chain_config,
    )
    validate_experiment_config(experiment)
    return experiment


def validate_experiment_config(cfg: ExperimentConfig):
    f1, g = cfg.figure1, cfg.gtd
    if cfg.workers < 1:
        raise ConfigError(f"workers 必须 ≥ 1: {cfg.workers}")
    for section, sub in (('figure1', f1), ('gtd', g)):
        if not sub.regimes:
            raise ConfigError(f"[{section}] 至少需要一个数据模式")
        if not sub.seeds:
            raise ConfigError(f"[{section}] 至少需要一个 seed")
        if not sub.replay:
            raise ConfigError(f"[{section}] replay 列表不能为空")
        if sub.T < 1:
            raise ConfigError(f"[{section}] T 必须 ≥ 1: {sub.T}")
        if sub.n_checkpoints < 1:
            raise ConfigError(f"[{section}] n_checkpoints 必须 ≥ 1")
        if min(sub.seeds) < 0:
            raise ConfigError(f"[{section}] seed 必须非负")
        _check_schedules(sub.schedules, section)
        for key in ('radius_x', 'radius_y'):
            if not getattr(sub, key) > 0:
                raise ConfigError(f"[{section}] {key} 必须为正: {getattr(sub, key)}")
        if not 0.0 < sub.delta < 1.0:
            raise ConfigError(f"[{section}] delta 必须在 (0, 1) 内: {sub.delta}")
    _check_schedules(cfg.bounds.schedules, 'bounds')
    if not 0.0 < cfg.bounds.delta < 1.0:
        raise ConfigError(f"[bounds] delta 必须在 (0, 1) 内: {cfg.bounds.delta}")
    if f1.n < 1:
        raise ConfigError(f"[figure1] n 必须 ≥ 1: {f1.n}")
    if f1.n_states < 2:
        raise ConfigError(f"[figure1] n_states 必须 ≥ 2: {f1.n_states}")
    if f1.noise_scale < 0:
        raise ConfigError(f"[figure1] noise_scale 必须非负: {f1.noise_scale}")
    if f1.replay_warmup < 0:
        raise ConfigError(f"[figure1] replay_warmup 必须非负: {f1.replay_warmup}")
    if f1.start not in ('origin', 'saddle'):
        raise ConfigError(f"[figure1] start 必须是 origin 或 saddle: {f1.start}")
    if f1.replay_capacity is not None and f1.replay_capacity < 1:
        raise ConfigError("[figure1] replay_capacity 必须 ≥ 1")
    for regime in f1.regimes:
        if regime.target is not None and not 0.0 < regime.target < 1.0:
            raise ConfigError(f"[figure1] λ₂ 目标必须在 (0, 1) 内: {regime.target}")
    for name in g.modes:
        if name not in ('gtd', 'gtd2'):
            raise ConfigError(f"[gtd] 未知模式: {name}")
    for name in g.policies:
        if name not in ('on', 'off'):
            raise ConfigError(f"[gtd] 未知策略模式: {name}")
    for name in g.regimes:
        if name not in ('markov', 'iid'):
            raise ConfigError(f"[gtd] 未知数据模式: {name}")
    if cfg.bounds.source not in ('simulation', 'gtd'):
        raise ConfigError(f"[bounds] source 必须是 simulation 或 gtd: {cfg.bounds.source}")
    if not cfg.bounds.T_grid or min(cfg.bounds.T_grid) < 1:
        raise ConfigError("[bounds] T_grid 必须是正整数列表")


def section_hash(section) -> str:
    return config_hash(asdict(section))


# --- 分布、提议与链 ---
def parse_pi(spec: str, n_states: int) -> np.ndarray:
    """'uniform' | 'zipf:s' | 文件路径 (.txt) | 逗号分隔的概率列表。"""
    spec = spec.strip()
    if spec == 'uniform':
        pi = np.full(n_states, 1.0 / n_states)
    elif spec.startswith('zipf:'):
        exponent = float(spec.split(':', 1)[1])
        weights = 1.0 / np.arange(1, n_states + 1) ** exponent
        pi = weights / weights.sum()
    elif spec.endswith('.txt'):
        try:
            pi = np.loadtxt(spec, ndmin=1)
        except (OSError, ValueError) as e:
            raise ConfigError(f"无法读取分布文件 {spec}: {e}") from e
    else:
        pi = np.asarray(parse_list(spec, float))
    if pi.size != n_states:
        raise ConfigError(f"分布长度 {pi.size} 与状态数 {n_states} 不符")
    return validate_distribution(pi, strictly_positive=True)


def parse_proposal(spec: str, n_states: int) -> np.ndarray:
    """'uniform' | 'random_walk:k' | 'mixed:k:locality'"""
    parts = spec.strip().split(':')
    try:
        if parts[0] == 'uniform':
            return uniform_proposal(n_states)
        if parts[0] == 'random_walk':
            return random_walk_proposal(n_states, int(parts[1]) if len(parts) > 1 else 1)
        if parts[0] == 'mixed':
            return mixed_proposal(n_states, int(parts[1]), float(parts[2]))
    except (IndexError, ValueError) as e:
        raise ConfigError(f"无法解析提议分布 '{spec}': {e}") from e
    raise ConfigError(f"未知的提议分布: '{spec}'")


@dataclass(frozen=True, eq=False)
class RegimeChain:
    regime: RegimeSpec
    chain: FiniteChain
    second_eigenvalue: float
    laziness: float | None
    tau: dict

    def bound_tau_table(self) -> dict:
        """求界时的 τ(η) 表；i.i.d. 只有 η = 0, τ = 0 一项。"""
        if self.regime.mode == 'iid':
            return {0.0: 0}
        return {eta: self.tau[eta] for eta in ETA_GRID}

    def describe(self) -> dict:
        return {
            'mode': self.regime.mode,
            'target': self.regime.target,
            'second_eigenvalue': self.second_eigenvalue,
            'laziness': self.laziness,
            'tau': {f"{eta:g}": tau for eta, tau in sorted(self.tau.items(), reverse=True)},
        }


def build_regime_chains(cfg: Figure1Config) -> dict[str, RegimeChain]:
    pi = parse_pi(cfg.pi, cfg.n_states)
    proposal = parse_proposal(cfg.proposal, cfg.n_states)
    etas = sorted(set(ETA_GRID) | set(REPORT_ETAS), reverse=True)
    chains = {}
    for regime in cfg.regimes:
        if regime.mode == 'iid':
            chain = FiniteChain(np.tile(pi, (pi.size, 1)), pi)
            chains[regime.name] = RegimeChain(regime, chain, 0.0, None, {eta: 0 for eta in etas})
            continue
        tuned = tune_spectral_gap(pi, regime.target, cfg.lambda_tolerance, proposal)
        report = mixing_time(tuned.chain, etas)
        chains[regime.name] = RegimeChain(regime, tuned.chain, tuned.second_eigenvalue, tuned.laziness, report.tau)
        logging.info(f"数据模式 {regime.name}: λ₂={tuned.second_eigenvalue:.4f}, "
                     f"τ(0.1)={report.tau[0.1]}, τ(0.01)={report.tau[0.01]}")
    return chains


def stream_seed(seed: int, regime_name: str) -> np.random.SeedSequence:
    """同一 (seed, 数据模式) 在不同步长和 replay 开关下共享底层样本路径。"""
    return np.random.SeedSequence([seed, zlib.crc32(regime_name.encode('utf-8'))])


# --- 并行执行 ---
_WORKER_CONTEXT: dict = {}


def _init_worker(context: dict):
    _WORKER_CONTEXT.clear()
    _WORKER_CONTEXT.update(context)


def execute_tasks(fn, tasks: list, context: dict, workers: int) -> list:
    """workers = 1 时在本进程顺序执行；否则用进程池，结果按任务顺序返回。"""
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(context)
        return [fn(task) for task in tasks]
    logging.info(f"使用 {workers} 个进程执行 {len(tasks)} 个任务")
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(context,)) as pool:
        return list(pool.map(fn, tasks))


# --- CSV ---
def _replay_label(replay: bool) -> str:
    return 'true' if replay else 'false'


def cell_filename(schedule: str, regime: str, replay: bool) -> str:
    safe = lambda text: text.replace(':', '_').replace('/', '-')
    return f"{safe(schedule)}__{safe(regime)}__{'replay' if replay else 'plain'}.csv"


def write_csv(records: list[dict], path: Path) -> Path:
    frame = pd.DataFrame.from_records(records, columns=CSV_COLUMNS)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={'seed': str, 'replay': str, 'regime': str, 'schedule': str})


def mean_over_seeds(frame: pd.DataFrame) -> list[dict]:
    """按 (regime, schedule, replay, metric, t) 对 seed 求均值与标准误。"""
    keys = ['regime', 'schedule', 'replay', 'metric', 't']
    grouped = frame.groupby(keys, sort=True)['value'].agg(['mean', 'std', 'count']).reset_index()
    records = []
    for row in grouped.itertuples(index=False):
        base = {'t': int(row.t), 'regime': row.regime, 'schedule': row.schedule, 'replay': row.replay}
        stderr = float(row.std) / math.sqrt(row.count) if row.count > 1 else float('nan')
        records.append({**base, 'metric': row.metric, 'value': float(row.mean), 'seed': 'mean'})
        records.append({**base, 'metric': f"{row.metric}_stderr", 'value': stderr, 'seed': 'stderr'})
    return records


def write_metadata(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'schema_version': SCHEMA_VERSION, **payload}, f, indent=2, ensure_ascii=False, default=str)


# --- figure1 ---
@dataclass(frozen=True)
class Figure1Task:
    schedule: str
    regime: str
    replay: bool
    seed: int


@dataclass
class RunResult:
    run_dir: Path
    cell_paths: list[Path]
    mean_path: Path
    metadata_path: Path
    svg_paths: list[Path] = field(default_factory=list)
    violations: int = 0


def run_figure1_task(task: Figure1Task):
    cfg: Figure1Config = _WORKER_CONTEXT['config']
    instance = _WORKER_CONTEXT['instance']
    regime_chain: RegimeChain = _WORKER_CONTEXT['chains'][task.regime]
    problem = stochastic_problem(instance.problem, instance.family, name='simulation')
    stream = make_stream(regime_chain.regime.mode, regime_chain.chain, stream_seed(task.seed, task.regime),
                         replay=task.replay, replay_capacity=cfg.replay_capacity,
                         replay_warmup=cfg.replay_warmup)
    z1 = analytic_saddle(instance.problem) if cfg.start == 'saddle' else None
    started = time.perf_counter()
    trajectory = run_sgd(problem, stream, StepSchedule.parse(task.schedule), cfg.T, z1,
                         default_checkpoints(cfg.T, cfg.n_checkpoints))
    records = [
        {'t': cp.t, 'metric': 'gap', 'value': primal_dual_gap(instance.problem, cp.point).gap,
         'seed': str(task.seed), 'regime': task.regime, 'schedule': task.schedule,
         'replay': _replay_label(task.replay)}
        for cp in trajectory.checkpoints
    ]
    return task, records, time.perf_counter() - started


def figure1_bound_records(instance, cfg: Figure1Config, chains: dict[str, RegimeChain],
                          mean_frame: pd.DataFrame) -> tuple[list[dict], int]:
    """每条均值曲线在每个检查点的 lemma1 界 (η 在网格上取最优)，并统计测量值超过界的次数。"""
    D = product_diameter(instance.problem.domain_x, instance.problem.domain_y)
    L1, L2 = lipschitz_constants(instance.problem, instance.family)
    gaps = mean_frame[(mean_frame['metric'] == 'gap') & (mean_frame['seed'] == 'mean')]
    records, violations = [], 0
    for (regime, label, replay), curve in gaps.groupby(['regime', 'schedule', 'replay'], sort=True):
        schedule = StepSchedule.parse(label)
        tau_table = chains[regime].bound_tau_table()
        for t, gap in zip(curve['t'], curve['value']):
            t = int(t)
            choice = minimize_over_eta(
                lambda eta, tau: BoundInputs(D, L1, L2, schedule, t, tau, eta, cfg.delta), tau_table, t)
            if choice is None:
                logging.debug(f"{regime}/{label}/{replay} t={t}: 所有 η 都不满足 τ ≤ t/2，跳过")
                continue
            records.append({'t': t, 'metric': 'lemma1_bound', 'value': choice.value, 'seed': 'mean',
                            'regime': regime, 'schedule': label, 'replay': replay})
            if gap > choice.value:
                violations += 1
                logging.warning(f"测量间隙超过期望界: {regime}/{label}/replay={replay} t={t}, "
                                f"gap={gap:.4g} > bound={choice.value:.4g}")
    return records, violations


def run_figure1(cfg: ExperimentConfig, render: bool = True) -> RunResult:
    f1 = cfg.figure1
    logging.info("=" * 20 + " figure1: 仿真实验 " + "=" * 20)
    run_dir = cfg.out_dir / 'figure1'
    chains = build_regime_chains(f1)
    pi = chains[f1.regimes[0].name].chain.pi
    instance = make_simulation_problem(f1.n, pi, f1.instance_seed, f1.radius_x, f1.radius_y,
                                       noise_scale=f1.noise_scale)
    tasks = [Figure1Task(schedule, regime.name, replay, seed)
             for schedule in f1.schedules for regime in f1.regimes for replay in f1.replay for seed in f1.seeds]
    logging.info(f"共 {len(tasks)} 个任务: {len(f1.schedules)} 个步长 × {len(f1.regimes)} 个数据模式 × "
                 f"{len(f1.replay)} 个 replay 开关 × {len(f1.seeds)} 个 seed, T={f1.T}")

    results = execute_tasks(run_figure1_task, tasks, {'config': f1, 'instance': instance, 'chains': chains},
                            cfg.workers)

    cells: dict[tuple, list] = {}
    wall_clock: dict[str, float] = {}
    for task, records, seconds in results:
        key = (task.schedule, task.regime, task.replay)
        cells.setdefault(key, []).extend(records)
        name = cell_filename(*key)
        wall_clock[name] = wall_clock.get(name, 0.0) + seconds

    cell_paths = []
    all_records = []
    for key in sorted(cells):
        records = sorted(cells[key], key=lambda r: (int(r['seed']), r['t']))
        cell_paths.append(write_csv(records, run_dir / 'cells' / cell_filename(*key)))
        all_records.extend(records)

    mean_records = mean_over_seeds(pd.DataFrame.from_records(all_records, columns=CSV_COLUMNS))
    bound_records, violations = figure1_bound_records(
        instance, f1, chains, pd.DataFrame.from_records(mean_records, columns=CSV_COLUMNS))
    mean_path = write_csv(mean_records + bound_records, run_dir / 'mean.csv')

    L1, L2 = lipschitz_constants(instance.problem, instance.family)
    metadata_path = run_dir / 'metadata.json'
    write_metadata(metadata_path, {
        'command': 'figure1',
        'config_hash': section_hash(f1),
        'config': asdict(f1),
        'radii': {'x': f1.radius_x, 'y': f1.radius_y},
        'pi': f1.pi,
        'n_states': f1.n_states,
        'instance_seed': f1.instance_seed,
        'lipschitz': {'L1': L1, 'L2': L2,
                      'D': product_diameter(instance.problem.domain_x, instance.problem.domain_y)},
        'chains': {name: rc.describe() for name, rc in chains.items()},
        'bound_violations': violations,
        'wall_clock_seconds': wall_clock,
    })
    result = RunResult(run_dir, cell_paths, mean_path, metadata_path, violations=violations)
    if render:
        from svg_plots import render_run
        result.svg_paths = render_run(run_dir)
    _print_final_summary(mean_path)
    logging.info("=" * 20 + f" figure1 完成: {run_dir.resolve()} " + "=" * 20)
    return result


def _print_final_summary(mean_path: Path):
    frame = read_csv(mean_path)
    means = frame[frame['seed'] == 'mean']
    final = means[means['t'] == means['t'].max()]
    table = final.pivot_table(index=['schedule', 'replay', 'regime'], columns='metric', values='value')
    print(f"\n最终检查点 (t={int(means['t'].max())}) 的均值:")
    print(table.to_string(float_format=lambda v: f"{v:.4e}"))


# --- gtd ---
@dataclass(frozen=True)
class GtdTask:
    mode: str
    policy: str
    regime: str
    replay: bool
    schedule: str
    seed: int

    @property
    def label(self) -> str:
        return f"{self.mode}/{self.policy}/{self.regime}"


def parse_features(spec: str, n_states: int, seed: int = 0, from_file: FeatureMap | None = None) -> FeatureMap:
    if from_file is not None and spec == 'file':
        return from_file
    if spec == 'tabular':
        return FeatureMap.tabular(n_states)
    if spec.startswith('random:'):
        return FeatureMap.random(n_states, int(spec.split(':', 1)[1]), seed)
    raise ConfigError(f"未知的特征配置: '{spec}' (可选 tabular, random:d, file)")


def build_gtd_instances(g: GtdConfig) -> dict:
    if g.mdp.endswith('.json'):
        mdp, file_features = load_mdp_with_features(Path(g.mdp))
    else:
        mdp, file_features = resolve_mdp(g.mdp, g.mdp_seed, g.gamma), None
    features = parse_features(g.features, mdp.n_states, g.mdp_seed, file_features)
    return {(mode, policy): exact_instance_matrices(mdp, features, mode, policy)
            for mode in g.modes for policy in g.policies}


def run_gtd_task(task: GtdTask):
    g: GtdConfig = _WORKER_CONTEXT['config']
    instance = _WORKER_CONTEXT['instances'][(task.mode, task.policy)]
    chain = _WORKER_CONTEXT['chains'][(task.mode, task.policy)]
    problem = gtd_saddle_problem(instance, g.radius_x, g.radius_y)
    deterministic = gtd_bilinear_problem(instance, g.radius_x, g.radius_y)
    constants = gtd_constants(instance)
    stream = make_stream(task.regime, chain, stream_seed(task.seed, task.label), replay=task.replay)
    started = time.perf_counter()
    trajectory = run_sgd(problem, stream, StepSchedule.parse(task.schedule), g.T,
                         checkpoint_grid=default_checkpoints(g.T, g.n_checkpoints))
    records = []
    for cp in trajectory.checkpoints:
        gap = primal_dual_gap(deterministic, cp.point).gap
        metrics = {
            'value_error': value_error(instance, cp.x),
            'residual': float(np.linalg.norm(instance.A @ cp.x - instance.b)),
            'objective': objective(instance, cp.x),
            'gap': gap,
            'value_error_bound': value_error_from_gap(constants, gap, task.policy),
        }
        for metric, value in metrics.items():
            records.append({'t': cp.t, 'metric': metric, 'value': value, 'seed': str(task.seed),
                            'regime': task.label, 'schedule': task.schedule, 'replay': _replay_label(task.replay)})
    return task, records, time.perf_counter() - started


def _chain_diagnostics(chain: FiniteChain) -> dict:
    lam2 = second_eigenvalue_modulus(chain, method='dense')
    try:
        tau = mixing_time(chain, REPORT_ETAS, method='dense').tau
    except MixingTooSlowError as e:
        logging.warning(f"转移链不满足一致混合 ({e})，τ(η) 记为空")
        tau = None
    return {'second_eigenvalue': lam2, 'tau': None if tau is None else {f"{k:g}": v for k, v in tau.items()}}


def run_gtd(cfg: ExperimentConfig, render: bool = True) -> RunResult:
    g = cfg.gtd
    logging.info("=" * 20 + f" gtd: {g.mdp} " + "=" * 20)
    run_dir = cfg.out_dir / 'gtd'
    instances = build_gtd_instances(g)
    chains = {key: transition_chain(instance) for key, instance in instances.items()}
    tasks = [GtdTask(mode, policy, regime, replay, schedule, seed)
             for mode in g.modes for policy in g.policies for regime in g.regimes
             for replay in g.replay for schedule in g.schedules for seed in g.seeds]
    results = execute_tasks(run_gtd_task, tasks, {'config': g, 'instances': instances, 'chains': chains},
                            cfg.workers)

    cells: dict[tuple, list] = {}
    wall_clock: dict[str, float] = {}
    for task, records, seconds in results:
        key = (task.schedule, task.label, task.replay)
        cells.setdefault(key, []).extend(records)
        name = cell_filename(*key)
        wall_clock[name] = wall_clock.get(name, 0.0) + seconds
    cell_paths, all_records = [], []
    for key in sorted(cells):
        records = sorted(cells[key], key=lambda r: (int(r['seed']), r['t'], r['metric']))
        cell_paths.append(write_csv(records, run_dir / 'cells' / cell_filename(*key)))
        all_records.extend(records)
    mean_path = write_csv(mean_over_seeds(pd.DataFrame.from_records(all_records, columns=CSV_COLUMNS)),
                          run_dir / 'mean.csv')

    instances_meta = {}
    for (mode, policy), instance in instances.items():
        instances_meta[f"{mode}/{policy}"] = {
            'rho_max': instance.rho_max,
            'cond_A': instance.cond_A,
            'cond_C': instance.cond_C,
            'constants': asdict(gtd_constants(instance)),
            'transition_chain': _chain_diagnostics(chains[(mode, policy)]),
        }
    metadata_path = run_dir / 'metadata.json'
    write_metadata(metadata_path, {
        'command': 'gtd',
        'config_hash': section_hash(g),
        'config': asdict(g),
        'radii': {'x': g.radius_x, 'y': g.radius_y},
        'mdp': g.mdp,
        'instances': instances_meta,
        'wall_clock_seconds': wall_clock,
    })
    result = RunResult(run_dir, cell_paths, mean_path, metadata_path)
    if render:
        from svg_plots import render_run
        result.svg_paths = render_run(run_dir)
    _print_final_summary(mean_path)
    logging.info("=" * 20 + f" gtd 完成: {run_dir.resolve()} " + "=" * 20)
    return result


# --- bounds ---
def _bound_rows(label: str, regime: str, T: int, choice_l1, choice_t1, inputs_for) -> list[dict]:
    base = {'t': T, 'seed': '', 'regime': regime, 'schedule': label, 'replay': 'false'}
    if choice_l1 is None or choice_t1 is None:
        return [{**base, 'metric': 'precondition_violated', 'value': 1.0}]
    terms = theorem1_terms(inputs_for(choice_t1.eta, choice_t1.tau))
    rows = [
        {**base, 'metric': 'lemma1', 'value': choice_l1.value},
        {**base, 'metric': 'theorem1', 'value': choice_t1.value},
        {**base, 'metric': 'eta', 'value': choice_t1.eta},
        {**base, 'metric': 'tau', 'value': float(choice_t1.tau)},
    ]
    for name, value in terms.as_dict().items():
        if name != 'sum_alpha':
            rows.append({**base, 'metric': f"term_{name}", 'value': value / terms.weight_sum})
    return rows


def run_bounds(cfg: ExperimentConfig) -> RunResult:
    b = cfg.bounds
    logging.info("=" * 20 + f" bounds: source={b.source} " + "=" * 20)
    run_dir = cfg.out_dir / 'bounds'
    records = []
    metadata = {'command': 'bounds', 'config_hash': section_hash(b), 'config': asdict(b)}

    if b.source == 'simulation':
        f1 = cfg.figure1
        chains = build_regime_chains(f1)
        pi = chains[f1.regimes[0].name].chain.pi
        instance = make_simulation_problem(f1.n, pi, f1.instance_seed, f1.radius_x, f1.radius_y,
                                           noise_scale=f1.noise_scale)
        D = product_diameter(instance.problem.domain_x, instance.problem.domain_y)
        L1, L2 = lipschitz_constants(instance.problem, instance.family)
        tau_tables = {name: rc.bound_tau_table() for name, rc in chains.items()}
        metadata['chains'] = {name: rc.describe() for name, rc in chains.items()}
        gtd_info = None
    else:
        g = cfg.gtd
        instances = build_gtd_instances(g)
        key = (g.modes[0], g.policies[0])
        instance = instances[key]
        constants = gtd_constants(instance)
        D = 2.0 * math.hypot(g.radius_x, g.radius_y)
        L1, L2 = proposition1_constants(constants, D)
        tau_tables = {'iid': {0.0: 0}}
        try:
            report = mixing_time(transition_chain(instance), ETA_GRID, method='dense')
            tau_tables['markov'] = {eta: report.tau[eta] for eta in ETA_GRID}
        except MixingTooSlowError as e:
            logging.warning(f"转移链不满足一致混合，跳过 markov 列: {e}")
        gtd_info = (constants, key[1])
        metadata['gtd_constants'] = asdict(constants)
        metadata['rho_max'] = instance.rho_max
    metadata.update({'D': D, 'L1': L1, 'L2': L2})

    for label in b.schedules:
        schedule = StepSchedule.parse(label)
        for regime, tau_table in tau_tables.items():
            for T in b.T_grid:
                inputs_for = (lambda T_: lambda eta, tau: BoundInputs(D, L1, L2, schedule, T_, tau, eta, b.delta))(T)
                choice_l1 = minimize_over_eta(inputs_for, tau_table, T, lemma1_bound)
                choice_t1 = minimize_over_eta(inputs_for, tau_table, T, theorem1_bound)
                rows = _bound_rows(label, regime, T, choice_l1, choice_t1, inputs_for)
                if choice_t1 is None:
                    logging.warning(f"{label}/{regime} T={T}: 没有 η 满足 τ(η) ≤ T/2，该行已标记")
                elif gtd_info is not None:
                    constants, policy = gtd_info
                    base = rows[0]
                    for kind in ('expectation', 'highprob'):
                        order = theorem2_order(constants, schedule, T, choice_t1.tau, b.delta, policy, kind)
                        rows.append({**base, 'metric': f"theorem2_{kind}", 'value': order.value})
                    rows.append({**base, 'metric': 'o1', 'value': order.o1})
                    rows.append({**base, 'metric': 'o2', 'value': order.o2})
                records.extend(rows)

    path = write_csv(records, run_dir / 'bounds.csv')
    metadata_path = run_dir / 'metadata.json'
    write_metadata(metadata_path, metadata)

    frame = pd.DataFrame.from_records(records, columns=CSV_COLUMNS)
    table = frame.pivot_table(index=['schedule', 'regime', 't'], columns='metric', values='value', sort=True)
    print(f"\n界的取值 (D={D:.4g}, L₁={L1:.4g}, L₂={L2:.4g}, δ={b.delta}):")
    print(table.to_string(float_format=lambda v: f"{v:.4e}"))
    logging.info("=" * 20 + f" bounds 完成: {path.resolve()} " + "=" * 20)
    return RunResult(run_dir, [], path, metadata_path)


# --- chain ---
def two_state_tau(p: float, q: float, pi, eta: float, max_lag: int = 10 ** 6) -> int:
    """两状态链的闭式: min{Δ : |1 − p − q|^Δ · 2·max(π) ≤ η}。"""
    rate = abs(1.0 - p - q)
    scale = 2.0 * float(np.max(pi))
    distance = scale
    for lag in range(max_lag + 1):
        if distance <= eta:
            return lag
        distance = scale * rate ** (lag + 1)
    raise MixingTooSlowError("两状态闭式在最大滞后内未达到 η", eta=eta)


@dataclass
class ChainResult:
    path: Path
    second_eigenvalue: float
    laziness: float
    tau: dict
    closed_form_tau: dict | None = None


def run_chain(cfg: ExperimentConfig) -> ChainResult:
    c = cfg.chain
    logging.info("=" * 20 + f" chain: S={c.n_states}, λ₂ 目标 {c.target} " + "=" * 20)
    pi = parse_pi(c.pi, c.n_states)
    proposal = parse_proposal(c.proposal, c.n_states)
    tuned = tune_spectral_gap(pi, c.target, c.tolerance, proposal, method=c.method)
    chain = tuned.chain

    stationarity = chain.stationarity_residual()
    balance = chain.detailed_balance_residual()
    if stationarity > 1e-10:
        raise NumericError("链的平稳性校验失败", residual=stationarity)
    if balance > 1e-12:
        raise NumericError("链的细致平衡校验失败", residual=balance)
    if abs(tuned.second_eigenvalue - c.target) > c.tolerance:
        raise NumericError("λ₂ 超出容差", achieved=tuned.second_eigenvalue, target=c.target)

    path = cfg.out_dir / 'chain' / f"chain_S{c.n_states}_lambda{c.target:g}.txt"
    save_chain(chain, path)
    report = mixing_time(chain, c.etas, method=c.method)

    print(f"\nS = {c.n_states}, λ₂ = {tuned.second_eigenvalue:.6f} (目标 {c.target} ± {c.tolerance}), "
          f"laziness = {tuned.laziness:.6f}")
    print(f"‖πP − π‖∞ = {stationarity:.3e}, 细致平衡残差 = {balance:.3e}")
    for eta in sorted(c.etas, reverse=True):
        print(f"τ({eta:g}) = {report.tau[eta]}")

    closed = None
    if c.n_states == 2:
        p, q = chain.P[0, 1], chain.P[1, 0]
        closed = {eta: two_state_tau(p, q, chain.pi, eta) for eta in c.etas}
        for eta in sorted(c.etas, reverse=True):
            match = '一致' if closed[eta] == report.tau[eta] else '不一致'
            print(f"两状态闭式 τ({eta:g}) = {closed[eta]} ({match})")
    print(f"链文件: {path}")
    return ChainResult(path, tuned.second_eigenvalue, tuned.laziness, dict(report.tau), closed)
