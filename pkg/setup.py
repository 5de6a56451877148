from setuptools import setup, find_packages

setup(
    name="growthlab",
    version="0.2.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "python-dotenv>=0.20.0",
        "colorama>=0.4.6",
    ],
    entry_points={
        "console_scripts": ["growthlab = growthlab.main:main"],
    },
)
