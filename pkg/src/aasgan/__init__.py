"""Pedestrian trajectory prediction with a GAN and an adversarially trained augmenter.

The package is organised bottom-up:

* ``data``       dataset files, scenes, relative coordinates
* ``synth``      straight-line synthetic trajectory generator
* ``nn``         differentiable primitives and the parameter store
* ``models``     Augmenter, Generator, Discriminator and the pooling module
* ``losses``     adversarial objectives and the variety loss
* ``training``   three-phase training loop, baselines, checkpoints
* ``evaluation`` ADE/FDE, best-of-N, leave-one-out, plotting
* ``cli``        the ``aasgan`` command
"""

__version__ = "0.1.0"
