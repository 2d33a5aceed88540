from django.db import models
from django.utils import timezone
import uuid


class SweepRecord(models.Model):
    """
    One `run` invocation: the resolved experiment config, where its CSVs and
    plot went, and how it ended.
    """
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('finished', 'Finished'),
        ('failed', 'Failed'),
    ]
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    name = models.CharField(max_length=255)
    config = models.JSONField()
    base_seed = models.BigIntegerField(default=0)
    seeds = models.PositiveIntegerField()
    steps = models.PositiveIntegerField()
    out_dir = models.CharField(max_length=1024)
    raw_csv = models.CharField(max_length=1024, blank=True)
    aggregate_csv = models.CharField(max_length=1024, blank=True)
    plot_path = models.CharField(max_length=1024, blank=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    error = models.TextField(blank=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.name} ({self.status})"

    def mark_finished(self, raw_csv, aggregate_csv, plot_path=None):
        self.raw_csv = str(raw_csv)
        self.aggregate_csv = str(aggregate_csv)
        self.plot_path = str(plot_path or "")
        self.status = 'finished'
        self.finished_at = timezone.now()
        self.save()

    def mark_failed(self, error):
        self.error = str(error)
        self.status = 'failed'
        self.finished_at = timezone.now()
        self.save()
