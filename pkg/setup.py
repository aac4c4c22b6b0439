"""Setup module for dotshape."""

from pathlib import Path

from setuptools import find_packages, setup

PROJECT_DIR = Path(__file__).parent.resolve()
README_FILE = PROJECT_DIR / "README.md"
VERSION = "2024.6.0"


setup(
    name="dotshape",
    version=VERSION,
    description="Level set shape reconstruction for time-resolved optical tomography",
    long_description=README_FILE.read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests.*", "tests"]),
    package_data={"dotshape": ["py.typed", "presets/*.json"]},
    python_requires=">=3.9",
    install_requires=["numpy>=1.22", "scipy>=1.8", "pydantic>=2", "click>=8"],
    entry_points={"console_scripts": ["dotshape = dotshape.__main__:main"]},
    include_package_data=True,
    zip_safe=False,
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Physics",
        "License :: OSI Approved :: Apache Software License",
    ],
)
