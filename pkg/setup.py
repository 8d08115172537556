import os
from pathlib import Path

from setuptools import setup, find_packages

if __name__ == "__main__":
    with Path(Path(__file__).parent, "README.md").open(encoding="utf-8") as file:
        long_description = file.read()

    def _read_reqs(relpath):
        fullpath = os.path.join(os.path.dirname(__file__), relpath)
        with open(fullpath) as f:
            return [
                s.strip()
                for s in f.readlines()
                if (s.strip() and not s.startswith("#"))
            ]

    REQUIREMENTS = _read_reqs("requirements.txt")
    DEV_REQUIREMENTS = _read_reqs("requirements-dev.txt")

    setup(
        name="evosynth",
        packages=find_packages(exclude=["tests", "tests.*"]),
        include_package_data=True,
        version="0.1.0",
        license="Apache 2.0",
        description="Cluster-driven evolutionary synthesis of sparse convolutional networks.",
        long_description=long_description,
        long_description_content_type="text/markdown",
        data_files=[(".", ["README.md"])],
        keywords=[
            "evolutionary synthesis",
            "structured pruning",
            "sparse networks",
            "mnist",
            "numpy",
        ],
        install_requires=REQUIREMENTS,
        extras_require={"dev": DEV_REQUIREMENTS},
        entry_points={"console_scripts": ["evosynth=evosynth.main:app"]},
        classifiers=[
            "Development Status :: 4 - Beta",
            "Intended Audience :: Science/Research",
            "Topic :: Scientific/Engineering :: Artificial Intelligence",
            "License :: OSI Approved :: MIT License",
            "Programming Language :: Python :: 3.9",
            "Programming Language :: Python :: 3.10",
        ],
    )
