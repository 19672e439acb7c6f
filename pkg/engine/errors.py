# ==============================================================================
# ERREURS DU MOTEUR DE MASQUAGE
# ==============================================================================

from typing import Optional


class MaskForgeError(Exception):
    """Erreur de base du moteur"""


class ArgumentError(MaskForgeError, ValueError):
    """Paramètre hors domaine (précondition violée)"""


class DegenerateSelectionError(ArgumentError):
    """Le ratio demandé masque zéro ou toutes les patches"""


class DataValidationError(MaskForgeError, ValueError):
    """Données lues correctement mais invalides (non finies, vides, non stochastiques...)"""


class FormatError(MaskForgeError):
    """
    Fichier mal formé.

    Porte la position fautive : `offset` (octet) pour les formats binaires,
    `line` (1-based) pour le format texte.
    """

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.offset = offset
        self.line = line
        if offset is not None:
            message = f"{message} (octet {offset})"
        elif line is not None:
            message = f"{message} (ligne {line})"
        super().__init__(message)
