from pathlib import Path

from setuptools import setup

this_directory = Path(__file__).parent
long_description = (this_directory / "README.md").read_text()

setup(
    name="viewdet",
    version="0.3.0",
    description="Monotonic determinacy of queries over views under existential rules.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Database",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    keywords="views determinacy chase datalog tgd rewriting tree automata",
    packages=["viewdet"],
    package_dir={"viewdet": "viewdet"},
    package_data={"viewdet": ["version.json"]},
    include_package_data=True,
    python_requires=">=3.8",
    install_requires=[
        "marshmallow>=3.21.3",
        "marshmallow-dataclass[enum, union]==8.7.0",
        "networkx>=2.6",
    ],
    extras_require={
        "dev": ["check-manifest", "invoke"],
        "test": ["pytest", "coverage"],
    },
    entry_points={"console_scripts": ["viewdet = viewdet.cli:main"]},
)
