import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="cinembed",
    license='MIT',
    version='0.1.0',
    description="Network embedding with completely-imbalanced labels.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages('src'),
    package_dir={'': 'src'},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires='>=3.8',
    install_requires=[
        'numpy',
        'scipy',
        'pandas',
        'tabulate',
        'networkx',
        'scikit-learn',
        'joblib',
        'threadpoolctl',
    ],
    entry_points={
        'console_scripts': [
            'cinembed = cinembed.cli:main',
        ]
    }
)
