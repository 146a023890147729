"""Neural stage-two refinement: U-Net and conditional-GAN trainers.

Talks to the reconstruction pipeline only through its documented file
formats (dataset manifest + binary sample/field files); never imports it.
"""

__version__ = "0.1.0"
