import configparser
import logging
import os
from collections.abc import Mapping

from embedding import DEFAULT_BUCKET
from errors import ConfigError
from linker import LinkerConfig
from services.match_providers import MatchConfig
from synthcorpus import NoiseConfig
from tagger import TaggerConfig
from textprep import DEFAULT_SEPARATORS, SeparatorConfig

logger = logging.getLogger(__name__)

CONFIG_FILE = "pipeline.ini"
DEFAULT_CONFIG = {
    "General": {
        "seed": "42",
        "workers": "1",
    },
    "Separators": {
        "separators": "".join(DEFAULT_SEPARATORS),
        "slash_min_run": "2",
        "period_digit_guard": "True",
    },
    "Matching": {
        "tau_approx": "0.7",
        "tau_emb": "0.85",
        "ngram_size": "3",
    },
    "Embedding": {
        "dim": "100",
        "epochs": "5",
        "window": "3",
        "negatives": "5",
        "min_n": "3",
        "max_n": "5",
        "bucket": str(DEFAULT_BUCKET),
        "learning_rate": "0.05",
    },
    "Tagger": {
        "epsilon_max": "0.3",
        "w_unmatched": "0.3",
        "augment_drop_p": "0.0",
        "epochs": "10",
        "finetune_epochs": "10",
        "learning_rate": "0.1",
        "batch_size": "16",
        "label_smoothing": "True",
        "hash_buckets": "262144",
        "use_embeddings": "True",
        "tighten_spans": "True",
        "tighten_min_df": "0.01",
    },
    "Linker": {
        "window": "2",
        "epochs": "10",
        "learning_rate": "0.1",
        "hidden_dim": "50",
        "batch_size": "32",
        "use_char_features": "True",
        "use_embeddings": "True",
    },
    "Synth": {
        "n_concepts": "692",
        "n_children": "191",
        "n_records": "10000",
        "typo_rate": "0.05",
        "no_punct_prob": "0.4",
        "filler_rate": "0.2",
        "abbreviation_rate": "0.1",
        "shared_token_rate": "0.05",
    },
}


class ConfigManager:
    """Pipeline settings: built-in defaults, then the optional ini file, then flag overrides."""

    def __init__(self, config_path=None):
        self.config_path = config_path
        self.config = configparser.ConfigParser(interpolation=None)
        self.config.read_dict(DEFAULT_CONFIG)
        if config_path is not None:
            self._load_config(config_path)

    def _load_config(self, path):
        if not os.path.exists(path):
            raise ConfigError(f"config file '{path}' does not exist")
        from_file = configparser.ConfigParser(interpolation=None)
        try:
            from_file.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config file '{path}': {e}")
        for section in from_file.sections():
            if section not in DEFAULT_CONFIG:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for option, value in from_file.items(section, raw=True):
                if option in from_file.defaults():
                    continue
                self._check_known(section, option)
                self.config.set(section, option, value)
        logger.info("Loaded config file %s", path)

    @staticmethod
    def _check_known(section, option):
        if section not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config section [{section}]")
        if option not in DEFAULT_CONFIG[section]:
            raise ConfigError(f"unknown option '{option}' in section [{section}]")

    def get(self, section, option):
        self._check_known(section, option)
        return self.config.get(section, option)

    def getboolean(self, section, option):
        self._check_known(section, option)
        try:
            return self.config.getboolean(section, option)
        except ValueError:
            raise ConfigError(
                f"[{section}] {option} must be a boolean, got '{self.config.get(section, option)}'"
            )

    def getint(self, section, option):
        self._check_known(section, option)
        try:
            return self.config.getint(section, option)
        except ValueError:
            raise ConfigError(
                f"[{section}] {option} must be an integer, got '{self.config.get(section, option)}'"
            )

    def getfloat(self, section, option):
        self._check_known(section, option)
        try:
            return self.config.getfloat(section, option)
        except ValueError:
            raise ConfigError(
                f"[{section}] {option} must be a number, got '{self.config.get(section, option)}'"
            )

    def set(self, section, option, value):
        self._check_known(section, option)
        self.config.set(section, option, str(value))

    def apply_overrides(self, overrides: Mapping[tuple[str, str], object]):
        """Apply flag values keyed by (section, option); ``None`` means the flag was not given."""
        for (section, option), value in overrides.items():
            if value is not None:
                self.set(section, option, value)
                logger.debug("Override [%s] %s = %s", section, option, value)

    def save(self, path=None):
        target = path or self.config_path or CONFIG_FILE
        os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
        with open(target, "w", encoding="utf-8") as configfile:
            self.config.write(configfile)
        return target

    @property
    def seed(self) -> int:
        return self.getint("General", "seed")

    @property
    def workers(self) -> int:
        workers = self.getint("General", "workers")
        if workers < 1:
            raise ConfigError(f"[General] workers must be >= 1, got {workers}")
        return workers

    def separator_config(self) -> SeparatorConfig:
        try:
            return SeparatorConfig(
                tuple(self.get("Separators", "separators")),
                self.getint("Separators", "slash_min_run"),
                self.getboolean("Separators", "period_digit_guard"),
            )
        except ValueError as e:
            raise ConfigError(f"[Separators] {e}")

    def match_config(self) -> MatchConfig:
        return MatchConfig(
            self.getfloat("Matching", "tau_approx"),
            self.getfloat("Matching", "tau_emb"),
            self.getint("Matching", "ngram_size"),
        )

    def embedding_params(self) -> dict:
        return {
            "dim": self.getint("Embedding", "dim"),
            "epochs": self.getint("Embedding", "epochs"),
            "window": self.getint("Embedding", "window"),
            "negatives": self.getint("Embedding", "negatives"),
            "ngram_range": (self.getint("Embedding", "min_n"), self.getint("Embedding", "max_n")),
            "bucket": self.getint("Embedding", "bucket"),
            "learning_rate": self.getfloat("Embedding", "learning_rate"),
            "seed": self.seed,
        }

    def tagger_config(self) -> TaggerConfig:
        return TaggerConfig(
            epsilon_max=self.getfloat("Tagger", "epsilon_max"),
            w_unmatched=self.getfloat("Tagger", "w_unmatched"),
            epochs=self.getint("Tagger", "epochs"),
            finetune_epochs=self.getint("Tagger", "finetune_epochs"),
            learning_rate=self.getfloat("Tagger", "learning_rate"),
            batch_size=self.getint("Tagger", "batch_size"),
            label_smoothing=self.getboolean("Tagger", "label_smoothing"),
            hash_buckets=self.getint("Tagger", "hash_buckets"),
            use_embeddings=self.getboolean("Tagger", "use_embeddings"),
            tighten_spans=self.getboolean("Tagger", "tighten_spans"),
            tighten_min_df=self.getfloat("Tagger", "tighten_min_df"),
        )

    @property
    def augment_drop_p(self) -> float:
        p = self.getfloat("Tagger", "augment_drop_p")
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"[Tagger] augment_drop_p must be in [0, 1], got {p}")
        return p

    def linker_config(self) -> LinkerConfig:
        return LinkerConfig(
            window=self.getint("Linker", "window"),
            epochs=self.getint("Linker", "epochs"),
            learning_rate=self.getfloat("Linker", "learning_rate"),
            hidden_dim=self.getint("Linker", "hidden_dim"),
            batch_size=self.getint("Linker", "batch_size"),
            use_char_features=self.getboolean("Linker", "use_char_features"),
            use_embeddings=self.getboolean("Linker", "use_embeddings"),
        )

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(
            typo_rate=self.getfloat("Synth", "typo_rate"),
            no_punct_prob=self.getfloat("Synth", "no_punct_prob"),
            filler_rate=self.getfloat("Synth", "filler_rate"),
            abbreviation_rate=self.getfloat("Synth", "abbreviation_rate"),
            shared_token_rate=self.getfloat("Synth", "shared_token_rate"),
        )
