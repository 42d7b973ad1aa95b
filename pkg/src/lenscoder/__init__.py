"""Simulation and end-to-end optimization toolkit for programmable lensless
cameras: wave-optics PSF simulation through an amplitude modulator, joint
modulator/classifier training, and ADMM-based reconstruction attacks for
assessing the visual privacy of low-resolution sensor embeddings."""

__version__ = "0.1.0"
