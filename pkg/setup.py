import os
from setuptools import setup

this_directory = os.path.abspath(os.path.dirname(__file__))

with open(os.path.join(this_directory, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

about = {}
with open(os.path.join(this_directory, 'SkorokhodDual/__init__.py'), encoding='utf-8') as f:
    exec(f.read(), about)

setup(
    name='SkorokhodDual',
    version=about['__version__'],
    packages=['SkorokhodDual',
              'tests',
              'SkorokhodDual.config',
              'SkorokhodDual.lattice',
              'SkorokhodDual.measures',
              'SkorokhodDual.oracles',
              'SkorokhodDual.payoffs',
              'SkorokhodDual.solvers',
              'SkorokhodDual.transport',
              'SkorokhodDual.utils'],
    url='https://github.com/EtWnn/SkorokhodDual',
    author='EtWnn',
    author_email='',
    license='MIT',
    description='Primal and dual solvers of optimal multi marginal Skorokhod embedding problems on a random walk lattice',
    long_description=long_description,
    long_description_content_type='text/x-rst',
    install_requires=['numpy', 'tqdm', 'appdirs', 'pydantic>=2'],
    entry_points={'console_scripts': ['SkorokhodDual=SkorokhodDual.cli:main']},
    keywords='skorokhod embedding optimal stopping martingale transport robust pricing superhedging linear program',
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Topic :: Office/Business :: Financial',
    ]
)
