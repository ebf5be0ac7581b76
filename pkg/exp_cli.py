# exp_cli.py
"""
命令行入口：
    saddlelab figure1 [--config PATH] [--seed N] [--out DIR] [--smoke] [--workers K]
    saddlelab gtd     ...
    saddlelab bounds  ...
    saddlelab chain   ...
    saddlelab render  RUN_DIR
退出码：0 成功, 2 配置错误, 3 数值/假设失败。
"""
import sys
import time
import logging
import argparse
from pathlib import Path

from utils import EXIT_OK, SaddleLabError, load_config, setup_logging

COMMANDS = ('figure1', 'gtd', 'bounds', 'chain')


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI 或 JSON 配置文件 (覆盖默认 config.ini)。")
    common.add_argument("--seed", type=int, help="只运行这一个 seed。")
    common.add_argument("--out", help="输出目录 (覆盖 [general] out_dir)。")
    common.add_argument("--smoke", action="store_true", help="快速模式：T = 1000, 最多 2 个 seed。")
    common.add_argument("--workers", type=int, help="并行进程数 (覆盖 [general] workers)。")
    common.add_argument("--log-level", help="日志级别：DEBUG, INFO, WARNING, ERROR。")

    parser = argparse.ArgumentParser(
        prog="saddlelab",
        description="Markov 数据下凸凹鞍点问题的投影随机梯度实验 (含 GTD/GTD2 策略评估)。")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("figure1", parents=[common], help="仿真鞍点问题：步长 × 数据模式 × replay 的间隙曲线。")
    sub.add_parser("gtd", parents=[common], help="GTD / GTD2 策略评估的价值误差曲线。")
    sub.add_parser("bounds", parents=[common], help="在 T 网格上求值有限样本界。")
    sub.add_parser("chain", parents=[common], help="构造、校验并保存指定 λ₂ 的 MH 链。")
    render = sub.add_parser("render", help="从已有 CSV 重新渲染 SVG。")
    render.add_argument("run_dir", help="figure1/ 或 gtd/ 输出目录，或它们的上层目录。")
    render.add_argument("--log-level", help="日志级别。")
    return parser


def run_command(args: argparse.Namespace) -> int:
    # 推迟导入：numpy/scipy 只在真正运行命令时加载
    import experiment_runner as runner

    if args.command == 'render':
        from svg_plots import render_run
        paths = render_run(Path(args.run_dir))
        print(f"已渲染 {len(paths)} 张 SVG")
        return EXIT_OK

    config = load_config(args.config)
    cfg = runner.load_experiment_config(config, seed=args.seed, smoke=args.smoke, out=args.out,
                                        workers=args.workers)
    logging.info(f"输出目录: {cfg.out_dir.resolve()}")
    if args.command == 'figure1':
        result = runner.run_figure1(cfg)
        if result.violations:
            logging.warning(f"共有 {result.violations} 个检查点的测量间隙超过期望界，详见 mean.csv")
    elif args.command == 'gtd':
        runner.run_gtd(cfg)
    elif args.command == 'bounds':
        runner.run_bounds(cfg)
    elif args.command == 'chain':
        runner.run_chain(cfg)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(level=args.log_level)
    else:
        try:
            setup_logging(load_config(getattr(args, 'config', None)))
        except SaddleLabError:
            # 配置错误在 run_command 中再报告一次并给出退出码
            setup_logging()

    start_time = time.time()
    logging.info("=" * 20 + f" saddlelab {args.command} " + "=" * 20)
    try:
        code = run_command(args)
    except SaddleLabError as e:
        logging.error(f"{type(e).__name__}: {e}")
        logging.error("=" * 20 + f" 失败 (退出码 {e.exit_code}) " + "=" * 20)
        return e.exit_code
    logging.info(f"总耗时: {time.time() - start_time:.2f} 秒")
    return code


# --- 主程序入口 ---
if __name__ == "__main__":
    sys.exit(main())
