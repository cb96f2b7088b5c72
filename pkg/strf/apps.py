"""
strf - App Configuration
"""

import logging

from django.apps import AppConfig

log = logging.getLogger(__name__)


class StrfConfig(AppConfig):
    name = "strf"
    label = "strf"
    verbose_name = "Covariant spatio-temporal receptive fields"

    def ready(self):
        log.debug("{label} is ready.".format(label=self.label))
