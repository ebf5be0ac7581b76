# setup.py
from pathlib import Path

from setuptools import setup

APP_NAME = "saddlelab"
VERSION = "0.1.0"
MAIN_MODULE = "exp_cli"

PY_MODULES = [
    'utils', 'saddle_core', 'markov_data', 'gap_metrics', 'gtd_eval', 'bounds',
    'experiment_runner', 'svg_plots', 'exp_cli',
]

README = Path(__file__).parent / 'README.md'

setup(
    name=APP_NAME,
    version=VERSION,
    description="Projected stochastic gradient for convex-concave saddle problems under Markov data, with GTD/GTD2 policy evaluation",
    long_description=README.read_text(encoding='utf-8') if README.exists() else '',
    long_description_content_type='text/markdown',
    py_modules=PY_MODULES,
    data_files=[('', ['config.ini'])],
    python_requires='>=3.10',
    install_requires=['numpy>=1.24', 'scipy>=1.10', 'pandas>=1.5', 'matplotlib>=3.7'],
    extras_require={'test': ['pytest>=7', 'hypothesis>=6.80']},
    entry_points={'console_scripts': [f"{APP_NAME}={MAIN_MODULE}:main"]},
)
