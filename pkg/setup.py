from setuptools import setup

# Packaging metadata for chipgate lives in pyproject.toml; this shim only
# keeps legacy `pip install -e .` workflows working.
setup()
