# svg_plots.py
"""只从 CSV 渲染 SVG 图；同样的 CSV 得到逐字节相同的 SVG。"""
import logging
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
except ImportError:
    logging.error("缺少 'matplotlib' 库。请运行 'pip install matplotlib'。")
    raise

# 固定 SVG 内部 id 的盐值，并去掉日期元数据
plt.rcParams['svg.hashsalt'] = 'saddlelab'
SVG_METADATA = {'Date': None}

REGIME_STYLES = {
    'slow': {'color': '#d62728', 'marker': 'o'},
    'fast': {'color': '#1f77b4', 'marker': 's'},
    'iid': {'color': '#2ca02c', 'marker': '^'},
}


def _read(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={'seed': str, 'replay': str, 'regime': str, 'schedule': str})


CAPTION_PREFIX = 'reconstruction parameters'


def csv_caption(run_dir: Path) -> str:
    """图注只取自 CSV：mean.csv 的最大 t，以及 cells/ 下出现过的 seed 个数。"""
    run_dir = Path(run_dir)
    frame = _read(run_dir / 'mean.csv')
    parts = [f"T={int(frame['t'].max())}"]
    seeds = set()
    for cell in sorted((run_dir / 'cells').glob('*.csv')):
        seeds.update(_read(cell)['seed'])
    if seeds:
        parts.append(f"seeds={len(seeds)}")
    parts.append(f"schedules={','.join(sorted(frame['schedule'].unique()))}")
    return f"{CAPTION_PREFIX}: {', '.join(parts)}"


def run_command(frame: pd.DataFrame) -> str:
    return 'gtd' if 'value_error' in set(frame['metric']) else 'figure1'


def _safe(text: str) -> str:
    return text.replace(':', '_').replace('/', '-')


def _plot_curve(ax, curve: pd.DataFrame, stderr: pd.DataFrame | None, label: str, style: dict):
    t = curve['t'].to_numpy()
    mean = curve['value'].to_numpy()
    ax.plot(t, mean, label=label, linewidth=1.2, markersize=3, **style)
    if stderr is not None and len(stderr) == len(curve):
        err = np.nan_to_num(stderr['value'].to_numpy())
        # 对数坐标下带宽下沿不能 ≤ 0
        lower = np.where(mean - err > 0, mean - err, 0.5 * mean)
        ax.fill_between(t, lower, mean + err, color=style.get('color'), alpha=0.15, linewidth=0)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logging.info(f"图已保存: {path}")
    return path


def render_figure1(mean_csv: Path, out_dir: Path, caption: str = CAPTION_PREFIX) -> list[Path]:
    """每个 (步长, replay) 一张图，每个数据模式一条均值间隙曲线，对数坐标。"""
    frame = _read(mean_csv)
    gaps = frame[frame['metric'] == 'gap']
    errors = frame[frame['metric'] == 'gap_stderr']
    paths = []
    for (schedule, replay), panel in gaps.groupby(['schedule', 'replay'], sort=True):
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for regime, curve in panel.groupby('regime', sort=True):
            curve = curve.sort_values('t')
            err = errors[(errors['schedule'] == schedule) & (errors['replay'] == replay)
                         & (errors['regime'] == regime)].sort_values('t')
            style = REGIME_STYLES.get(regime, {'marker': '.'})
            _plot_curve(ax, curve, err, regime, style)
        ax.set_xscale('log')
        ax.set_yscale('log')
        ax.set_xlabel('t')
        ax.set_ylabel('primal-dual gap of averaged iterate')
        ax.set_title(f"{schedule}, replay={replay}", fontsize=10)
        ax.grid(True, which='both', alpha=0.3)
        ax.legend(fontsize=8)
        fig.text(0.01, 0.01, caption, fontsize=6, alpha=0.7)
        fig.tight_layout(rect=(0, 0.03, 1, 1))
        paths.append(_save(fig, out_dir / f"gap__{_safe(schedule)}__{'replay' if replay == 'true' else 'plain'}.svg"))
    return paths


def render_gtd(mean_csv: Path, out_dir: Path, caption: str = CAPTION_PREFIX,
               metric: str = 'value_error') -> list[Path]:
    """每个 (模式/策略, 步长) 一张图，markov 与 iid (以及 replay) 各一条曲线。"""
    frame = _read(mean_csv)
    values = frame[frame['metric'] == metric]
    errors = frame[frame['metric'] == f"{metric}_stderr"]
    values = values.assign(setting=values['regime'].str.rsplit('/', n=1).str[0],
                           data=values['regime'].str.rsplit('/', n=1).str[1])
    paths = []
    for (setting, schedule), panel in values.groupby(['setting', 'schedule'], sort=True):
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for (regime, data, replay), curve in panel.groupby(['regime', 'data', 'replay'], sort=True):
            curve = curve.sort_values('t')
            err = errors[(errors['regime'] == regime) & (errors['schedule'] == schedule)
                         & (errors['replay'] == replay)].sort_values('t')
            style = dict(REGIME_STYLES.get(data, {'marker': '.'}))
            style['linestyle'] = '--' if replay == 'true' else '-'
            _plot_curve(ax, curve, err, f"{data}{' + replay' if replay == 'true' else ''}", style)
        ax.set_xscale('log')
        ax.set_yscale('log')
        ax.set_xlabel('t')
        ax.set_ylabel(metric.replace('_', ' '))
        ax.set_title(f"{setting}, {schedule}", fontsize=10)
        ax.grid(True, which='both', alpha=0.3)
        ax.legend(fontsize=8)
        fig.text(0.01, 0.01, caption, fontsize=6, alpha=0.7)
        fig.tight_layout(rect=(0, 0.03, 1, 1))
        paths.append(_save(fig, out_dir / f"{metric}__{_safe(setting)}__{_safe(schedule)}.svg"))
    return paths


def render_run(run_dir: Path) -> list[Path]:
    """
    run_dir 可以是单个命令的输出目录 (含 mean.csv 与 cells/)，
    也可以是上层输出目录 (含 figure1/ 与 gtd/ 子目录)。
    """
    run_dir = Path(run_dir)
    paths = []
    mean_csv = run_dir / 'mean.csv'
    if mean_csv.exists():
        caption = csv_caption(run_dir)
        if run_command(_read(mean_csv)) == 'gtd':
            paths += render_gtd(mean_csv, run_dir / 'plots', caption)
        else:
            paths += render_figure1(mean_csv, run_dir / 'plots', caption)
        return paths
    for sub in ('figure1', 'gtd'):
        if (run_dir / sub / 'mean.csv').exists():
            paths += render_run(run_dir / sub)
    if not paths:
        logging.warning(f"{run_dir} 下没有可渲染的 mean.csv")
    return paths
