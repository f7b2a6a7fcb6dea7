"""
The keybench configuration file and the LLSD data files it shares a format with.

A configuration file looks like:

    <llsd><map>
      <key>type</key><string>keybench</string>
      <key>version</key><string>1</string>
      <key>collector</key><string>192.168.1.20:55555</string>
      <key>settle_seconds</key><real>5</real>
      <key>poll_hz</key><string>10</string>
      <key>keygen</key><map>
        <key>command</key><string>openssl</string>
        <key>options</key><array>...</array>
      </map>
      <key>hooks</key><map>
        <key>set_fan_max</key><map><key>command</key>...</map>
      </map>
    </map></llsd>

Every key is optional; command-line flags and environment variables win over
anything read here.
"""
import logging
import os

import llsd

from keybench import common
from keybench.executable import Executable, ExecutableError, executable_from_dict
from keybench.protocol import as_poll_hz

logger = logging.getLogger('keybench.configfile')

KEYBENCH_CONFIG_FILE = 'keybench.xml'
KEYBENCH_CONFIG_VERSION = '1'
KEYBENCH_CONFIG_TYPE = 'keybench'

DEFAULT_SETTLE_SECONDS = 5.0
DEFAULT_POLL_HZ = 10
DEFAULT_KEYGEN = dict(command='openssl',
                      options=['genpkey', '-algorithm', '{algorithm}', '{params}'])
HOOK_NAMES = ('set_fan_max', 'pin_cpu_clock', 'restore', 'read_temp')


class ConfigurationError(common.ConfigurationError):
    pass


def read_llsd(path, what='data file'):
    """Parse an LLSD file, turning every failure into a ConfigurationError."""
    try:
        with open(path, 'rb') as f:
            content = f.read()
    except OSError as err:
        raise ConfigurationError("cannot read %s %s: %s" % (what, path, err))
    try:
        return llsd.parse(content)
    except llsd.LLSDParseError as err:
        raise ConfigurationError("%s %s is not valid LLSD: %s" % (what, path, err))


def config_path(path=None):
    return path or os.environ.get('KEYBENCH_CONFIG_FILE') or KEYBENCH_CONFIG_FILE


class ExperimentConfiguration(common.Serialized):
    """
    Settings for the DUT side of an experiment.

    Attributes:
        collector       'host:port' of the collector, or None
        settle_seconds  pause between pinning the platform and START
        poll_hz         sampling rate asked of the collector
        keygen          executable description of the key generator
        hooks           map of platform hook name -> executable description
    """

    # class attribute: not saved to file
    path = None

    def __init__(self, path=None):
        self.version = KEYBENCH_CONFIG_VERSION
        self.type = KEYBENCH_CONFIG_TYPE
        self.collector = None
        self.settle_seconds = DEFAULT_SETTLE_SECONDS
        self.poll_hz = str(DEFAULT_POLL_HZ)
        self.keygen = dict(DEFAULT_KEYGEN)
        self.hooks = {}
        if path is not None:
            self.__load(path)

    def __load(self, path):
        self.path = os.path.abspath(path)
        if not os.path.exists(self.path):
            logger.debug("no configuration file %s, using defaults" % self.path)
            return
        saved = read_llsd(self.path, 'configuration file')
        if not isinstance(saved, dict):
            raise ConfigurationError("configuration file %s is corrupt" % self.path)
        if saved.get('type', KEYBENCH_CONFIG_TYPE) != KEYBENCH_CONFIG_TYPE:
            raise ConfigurationError("%s is a '%s' file, not a keybench configuration" %
                                     (self.path, saved['type']))
        unknown = set(saved) - {'version', 'type', 'collector', 'settle_seconds', 'poll_hz', 'keygen', 'hooks'}
        if unknown:
            logger.warning("ignoring unknown keys in %s: %s" % (self.path, ', '.join(sorted(unknown))))
        for key in ('collector', 'settle_seconds', 'poll_hz', 'keygen', 'hooks'):
            if key in saved:
                self[key] = saved[key]
        self.validate()
        logger.debug("loaded configuration %s" % self.path)

    def validate(self):
        try:
            settle = float(self.settle_seconds)
        except (TypeError, ValueError):
            raise ConfigurationError("settle_seconds must be a number, not %r" % (self.settle_seconds,))
        if settle < 0:
            raise ConfigurationError("settle_seconds must be >= 0, not %s" % settle)
        self.settle_seconds = settle
        try:
            as_poll_hz(str(self.poll_hz))
        except (TypeError, ValueError, ZeroDivisionError):
            raise ConfigurationError("poll_hz '%s' is not a number" % self.poll_hz)
        if not isinstance(self.hooks, dict):
            raise ConfigurationError("hooks must be a map")
        unknown = set(self.hooks) - set(HOOK_NAMES)
        if unknown:
            raise ConfigurationError("unknown hooks %s (known: %s)" %
                                     (', '.join(sorted(unknown)), ', '.join(HOOK_NAMES)))
        # surface bad executable descriptions at load time
        self.get_keygen()
        self.get_hooks()

    def get_keygen(self) -> Executable:
        try:
            return executable_from_dict('keygen', self.keygen)
        except ExecutableError as err:
            raise ConfigurationError(str(err))

    def get_hooks(self):
        """map of hook name -> Executable for the hooks that are configured"""
        hooks = {}
        for name in HOOK_NAMES:
            description = self.hooks.get(name)
            if description:
                try:
                    hooks[name] = executable_from_dict(name, description)
                except ExecutableError as err:
                    raise ConfigurationError(str(err))
        return hooks

    def save(self, path=None):
        path = path or self.path
        if path is None:
            raise ConfigurationError("no path to save configuration to")
        with open(path, 'wb') as f:
            f.write(llsd.format_pretty_xml(dict(self)))
        self.path = os.path.abspath(path)
