from pathlib import Path

import setuptools

setuptools.setup(
    name='keybench',
    description='Two-node energy benchmarking of cryptographic key generation',
    long_description=(Path(__file__).parent / "README.md").read_text(),
    long_description_content_type="text/markdown",
    platforms=['any'],
    packages=setuptools.find_packages(exclude=['tests']),
    package_data={'keybench': ['data/*.xml']},
    use_scm_version={
        'write_to': 'keybench/version.py',
        'write_to_template': 'KEYBENCH_VERSION_STRING = \'{version}\'',
        'local_scheme': 'no-local-version',
        'fallback_version': '0.1.0',
    },
    setup_requires=['setuptools_scm'],
    entry_points={
        'console_scripts': ['keybench=keybench.keybench_main:main']
    },
    license='MIT',
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: Microsoft :: Windows',
        'Operating System :: Unix',
        'Programming Language :: Python :: 3',
        'Topic :: System :: Benchmark',
    ],
    install_requires=['llsd>=1.2.4', 'pyserial>=3.5', 'pycryptodome>=3.18', 'matplotlib>=3.5'],
    extras_require={
        'dev': ['pytest', 'pytest-cov', 'hypothesis'],
        'build': ['build', 'setuptools_scm'],
    },
    python_requires='>=3.8',
)
