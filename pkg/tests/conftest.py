"""Test fixtures."""
import os
import json
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import settings, Verbosity

from gap_metrics import make_simulation_problem
from gtd_eval import walk5_mdp, swap2_mdp, FeatureMap, exact_instance_matrices

# hypothesis 配置：CI 上放宽 deadline
settings.register_profile("ci", deadline=timedelta(milliseconds=2000))
settings.register_profile("dev", max_examples=10)
settings.register_profile("debug", max_examples=10, verbosity=Verbosity.verbose)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def simulation_instance():
    """n = 10 的仿真实例，样本族 5 个状态。"""
    return make_simulation_problem(n=10, pi=np.full(5, 0.2), seed=0)


@pytest.fixture
def swap2_instance():
    mdp = swap2_mdp()
    return exact_instance_matrices(mdp, FeatureMap.tabular(mdp.n_states), 'gtd', 'on')


@pytest.fixture
def walk5_instances():
    mdp = walk5_mdp()
    features = FeatureMap.tabular(mdp.n_states)
    return {(mode, policy): exact_instance_matrices(mdp, features, mode, policy)
            for mode in ('gtd', 'gtd2') for policy in ('on', 'off')}


@pytest.fixture
def write_config(tmp_path):
    """把 {section: {key: value}} 写成 JSON 配置，[general] out_dir 指向 tmp_path/runs。"""
    def _write(sections: dict, name: str = 'config.json'):
        payload = {'general': {'out_dir': str(tmp_path / 'runs'), 'workers': 1}}
        for section, keys in sections.items():
            payload.setdefault(section, {}).update(keys)
        path = tmp_path / name
        path.write_text(json.dumps(payload, ensure_ascii=False), encoding='utf-8')
        return path
    return _write
