from . import lotka_volterra, rigid_body

__all__ = ["lotka_volterra", "rigid_body"]
