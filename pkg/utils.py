# utils.py
import sys
import json
import hashlib
import logging
import configparser
from pathlib import Path

LOG_FORMAT = '%(asctime)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

# 退出码：0 成功, 2 配置错误, 3 数值/假设失败
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


# --- 异常层级 ---
class SaddleLabError(Exception):
    """所有可预期失败的基类，CLI 根据 exit_code 退出。"""
    exit_code = EXIT_NUMERIC


class ConfigError(SaddleLabError):
    exit_code = EXIT_CONFIG


class NumericError(SaddleLabError):
    exit_code = EXIT_NUMERIC

    def __init__(self, message, **context):
        self.context = context
        if context:
            details = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class AssumptionViolation(SaddleLabError):
    exit_code = EXIT_NUMERIC


class DimensionError(ValueError):
    """维度不匹配 (invalid-argument)。"""


def resource_path(relative_path):
    """ 获取资源的绝对路径，
        兼容开发环境和 PyInstaller 打包环境。 """
    try:
        base_path = Path(sys._MEIPASS)
    except Exception:
        # 开发环境: utils.py 与 config.ini 在同一目录
        base_path = Path(__file__).parent
    return base_path / relative_path


# --- 配置解析 ---
DEFAULT_CONFIG_PATH = resource_path('config.ini')


def load_config(user_path=None) -> configparser.ConfigParser:
    """
    读取默认 config.ini，再用用户配置覆盖。

    用户配置可以是 INI，也可以是结构相同 (section -> key -> value) 的 JSON。
    """
    config = configparser.ConfigParser()
    if DEFAULT_CONFIG_PATH.exists():
        try:
            config.read(DEFAULT_CONFIG_PATH, encoding='utf-8')
        except configparser.Error as e:
            raise ConfigError(f"加载默认配置 {DEFAULT_CONFIG_PATH} 失败: {e}") from e
    else:
        logging.warning(f"默认配置未找到: {DEFAULT_CONFIG_PATH}，将使用代码中的默认值。")

    if user_path is None:
        return config

    user_path = Path(user_path)
    if not user_path.is_file():
        raise ConfigError(f"配置文件不存在: {user_path}")
    try:
        if user_path.suffix.lower() == '.json':
            with open(user_path, encoding='utf-8') as f:
                data = json.load(f)
            if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
                raise ConfigError(f"JSON 配置必须是 section -> {{key: value}} 结构: {user_path}")
            config.read_dict({
                section: {key: _json_value_to_str(value) for key, value in keys.items()}
                for section, keys in data.items()
            })
        else:
            config.read(user_path, encoding='utf-8')
    except (configparser.Error, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"解析配置文件 {user_path} 失败: {e}") from e
    logging.info(f"加载配置: {user_path}")
    return config


def _json_value_to_str(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ', '.join(str(v) for v in value)
    return str(value)


def parse_list(text: str, cast=str) -> list:
    """逗号分隔的配置值 -> 列表。"""
    items = [item.strip() for item in text.replace('\n', ',').split(',')]
    try:
        return [cast(item) for item in items if item]
    except ValueError as e:
        raise ConfigError(f"无法解析列表值 '{text}': {e}") from e


# --- 日志记录配置 ---
def setup_logging(config: configparser.ConfigParser | None = None, level: str | None = None):
    """按照 [general] logging_level (或命令行覆盖) 配置根日志器。"""
    if level is None:
        level = 'INFO'
        if config is not None:
            level = config.get('general', 'logging_level', fallback='INFO')
    level_str = level.upper()
    log_level = getattr(logging, level_str, logging.INFO)
    logging.basicConfig(level=log_level, format=LOG_FORMAT, datefmt=LOG_DATEFMT, force=True)
    logging.debug(f"日志级别设置为: {level_str}")


def config_hash(payload: dict) -> str:
    """规范化 JSON 的 SHA-256，用于标识一次实验配置。"""
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
