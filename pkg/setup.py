"""Optional native build of the simulator's hot modules.

The sources are plain Python. When Cython is importable they are also compiled
in place, which roughly halves simulation wall time; set MPIP_PURE=1 to skip.
"""

import os

from setuptools import setup

HOT_MODULES = [
    "src/mpip/engine.py",
    "src/mpip/packet.py",
    "src/mpip/paths.py",
    "src/mpip/router.py",
    "src/mpip/tables.py",
    "src/mpip/transport.py",
    "src/mpip/wire.py",
    "src/mpip/netsim/core.py",
    "src/mpip/netsim/link.py",
    "src/mpip/netsim/node.py",
    "src/mpip/netsim/traffic.py",
]


def ext_modules():
    if os.environ.get("MPIP_PURE"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(HOT_MODULES, build_dir="build/cython", quiet=True,
                     compiler_directives={"language_level": "3", "binding": True})


setup(ext_modules=ext_modules())
