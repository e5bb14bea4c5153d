import math

import pytest
import torch

from protosim.backbone import load_pretrained, parameter_fingerprint
from protosim.checkpoint import load_checkpoint
from protosim.config import TrainConfig
from protosim.augment import AugmentConfig
from protosim.layer import HARD, SOFT
from protosim.models import ProjectionHead, ProtoModel
from protosim.synthetic import write_concept_dataset
from protosim.data import DatasetDescriptor
from protosim.training import (
    StudentState,
    TeacherState,
    bank_mean_cosine,
    build_student_teacher,
    cross_entropy,
    dino_loss,
    ema_update,
    read_train_log,
    schedule_mode,
    student_distribution,
    teacher_distribution,
    train,
    update_center,
)


def tiny_config(**overrides):
    base = dict(
        batch_size=8,
        learning_rate=1e-3,
        epochs=2,
        soft_epochs=1,
        num_prototypes=16,
        num_local_crops=2,
        head_output_dim=16,
        seed=0,
        augment=AugmentConfig(out_size=(32, 32), blur_prob=0.0),
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_datasets(tmp_path, per_concept=6):
    write_concept_dataset(tmp_path / "a", [0, 1], per_concept, seed=0)
    write_concept_dataset(tmp_path / "b", [4, 5], per_concept, seed=1)
    return [
        DatasetDescriptor("a", "a", tmp_path / "a", tmp_path / "a" / "labels.csv"),
        DatasetDescriptor("b", "b", tmp_path / "b", tmp_path / "b" / "labels.csv"),
    ]


class TestDinoLoss:
    def brute_force(self, teacher, student):
        eps = 1e-8
        terms = []
        for i, t in enumerate(teacher):
            for j, s in enumerate(student):
                if j == i:
                    continue
                terms.append(-(t * s.clamp(min=eps).log()).sum().item())
        return sum(terms) / len(terms), len(terms)

    @pytest.mark.parametrize("num_local", [0, 2, 4])
    def test_matches_brute_force_pair_enumeration(self, num_local):
        g = torch.Generator().manual_seed(num_local)
        teacher = [torch.softmax(torch.randn(5, generator=g), -1) for _ in range(2)]
        student = [torch.softmax(torch.randn(5, generator=g), -1)
                   for _ in range(2 + num_local)]
        expected, n_pairs = self.brute_force(teacher, student)
        assert n_pairs == 2 * (1 + num_local)
        got = dino_loss(teacher, student).item()
        assert abs(got - expected) < 1e-6

    def test_pair_count_two_global_two_local(self):
        probs = [torch.full((4,), 0.25)] * 2
        student = [torch.full((4,), 0.25)] * 4
        _, n_pairs = self.brute_force(probs, student)
        assert n_pairs == 6

    def test_matched_one_hot_is_zero(self):
        one_hot = torch.zeros(8)
        one_hot[3] = 1.0
        # same view is skipped; use the other global crop with the same one-hot
        loss = dino_loss([one_hot, one_hot], [one_hot, one_hot])
        assert 0.0 <= loss.item() <= 1e-6

    def test_uniform_pair_is_ln2(self):
        u = torch.full((2,), 0.5)
        loss = dino_loss([u, u], [u, u])
        assert abs(loss.item() - math.log(2)) < 1e-6

    def test_loss_nonnegative_random(self):
        g = torch.Generator().manual_seed(9)
        for _ in range(20):
            teacher = [torch.softmax(torch.randn(6, generator=g) * 3, -1) for _ in range(2)]
            student = [torch.softmax(torch.randn(6, generator=g) * 3, -1) for _ in range(3)]
            assert dino_loss(teacher, student).item() >= 0.0

    def test_no_valid_pairs(self):
        u = torch.full((2,), 0.5)
        with pytest.raises(ValueError, match="pair"):
            dino_loss([u], [u])


class TestEmaAndCenter:
    def make_pair(self):
        handle = load_pretrained("toy-vit-s8-d64,seed=1")
        config = tiny_config()
        return build_student_teacher(handle, config)

    def test_momentum_one_keeps_teacher(self):
        student, teacher = self.make_pair()
        before = parameter_fingerprint(teacher.prototypes)
        ema_update(teacher, student, 1.0)
        assert parameter_fingerprint(teacher.prototypes) == before

    def test_momentum_zero_copies_student(self):
        student, teacher = self.make_pair()
        with torch.no_grad():
            student.prototypes.weights.add_(1.0)
        ema_update(teacher, student, 0.0)
        assert torch.equal(teacher.prototypes.weights, student.prototypes.weights)

    def test_midpoint_arithmetic(self):
        student, teacher = self.make_pair()
        with torch.no_grad():
            teacher.prototypes.weights.fill_(2.0)
            student.prototypes.weights.fill_(0.0)
        ema_update(teacher, student, 0.5)
        assert torch.allclose(teacher.prototypes.weights, torch.full_like(
            teacher.prototypes.weights, 1.0))

    def test_exactness(self):
        student, teacher = self.make_pair()
        t0 = {n: p.clone() for n, p in teacher.named_parameters()}
        s0 = dict(student.named_parameters())
        lam = 0.996
        ema_update(teacher, student, lam, include_backbone=False)
        for name, p in teacher.prototypes.named_parameters():
            expected = t0[f"prototypes.{name}"] * lam + s0[f"prototypes.{name}"] * (1 - lam)
            assert (p - expected).abs().max().item() < 1e-7

    def test_center_ema(self):
        center = torch.zeros(3)
        batch = torch.ones(10, 3)
        new = update_center(center, batch, momentum=0.9)
        assert torch.allclose(new, torch.full((3,), 0.1))


class TestScheduleMode:
    def test_paper_schedule(self):
        config = TrainConfig(epochs=20, soft_epochs=15)
        assert schedule_mode(14, config) == SOFT
        assert schedule_mode(15, config) == HARD

    def test_zero_soft_epochs(self):
        config = tiny_config(epochs=2, soft_epochs=0)
        assert schedule_mode(0, config) == HARD

    def test_out_of_range(self):
        config = tiny_config()
        with pytest.raises(ValueError):
            schedule_mode(config.epochs, config)
        with pytest.raises(ValueError):
            schedule_mode(-1, config)


class TestDistributions:
    def setup_method(self):
        self.handle = load_pretrained("toy-vit-s8-d64,seed=2")
        self.config = tiny_config()
        student, teacher = build_student_teacher(self.handle, self.config)
        self.student = StudentState(student, self.config)
        self.teacher = TeacherState(teacher, torch.zeros(self.config.head_output_dim))
        mean, std = self.handle.normalization
        raw = torch.rand(32, 32, 3, generator=torch.Generator().manual_seed(0))
        self.crop = ((raw - torch.tensor(mean)) / torch.tensor(std)).permute(2, 0, 1)

    def test_student_sums_to_one(self):
        probs = student_distribution(self.student, self.crop, SOFT,
                                     torch.Generator().manual_seed(1))
        assert probs.shape == (16,)
        assert abs(probs.sum().item() - 1.0) < 1e-5
        assert (probs >= 0).all()

    def test_teacher_sharpening_limit(self):
        probs_sharp = teacher_distribution(self.teacher, self.crop, teacher_temp=1e-3,
                                           noisy=False)
        assert probs_sharp.max().item() > 0.999

    def test_centering_symmetry(self):
        # center equal to the logits themselves leaves uniform output
        with torch.no_grad():
            logits = self.teacher.model.head_logits(self.crop.unsqueeze(0), SOFT,
                                                    noisy=False)[0]
        state = TeacherState(self.teacher.model, logits)
        probs = teacher_distribution(state, self.crop, teacher_temp=0.5, noisy=False)
        assert torch.allclose(probs, torch.full_like(probs, 1.0 / probs.numel()), atol=1e-5)

    def test_two_crops_differ_early(self):
        other = self.crop + 0.5
        g = torch.Generator().manual_seed(3)
        a = student_distribution(self.student, self.crop, SOFT, g, noisy=False)
        b = student_distribution(self.student, other, SOFT, g, noisy=False)
        assert not torch.allclose(a, b)


class TestTrain:
    def test_toy_run_loss_decreases_and_logs(self, tmp_path):
        datasets = tiny_datasets(tmp_path, per_concept=8)
        config = tiny_config(epochs=4, soft_epochs=3, learning_rate=5e-3,
                             freeze_backbone=True)
        handle = load_pretrained("toy-vit-s8-d64,seed=3")
        out = tmp_path / "run"
        state, log = train(datasets, config, handle, out_dir=out)
        assert len(log) == config.epochs
        assert log[-1]["loss"] < log[0]["loss"]
        assert all("avg_cosine_sim" in e and "mode" in e for e in log)
        assert [e["mode"] for e in log] == [SOFT] * 3 + [HARD]
        disk_log = read_train_log(out / "trainlog.jsonl")
        assert disk_log == log
        assert (out / "checkpoint.pt").is_file()
        assert (out / "ckpt-epoch-003.pt").is_file()

    def test_backbone_frozen_and_teacher_gradient_free(self, tmp_path):
        datasets = tiny_datasets(tmp_path, per_concept=4)
        config = tiny_config(epochs=1, soft_epochs=1)
        handle = load_pretrained("toy-vit-s8-d64,seed=4")
        before = parameter_fingerprint(handle.module)
        state, _ = train(datasets, config, handle)
        assert parameter_fingerprint(handle.module) == before
        student, teacher = build_student_teacher(handle, config)
        assert all(not p.requires_grad for p in teacher.parameters())

    def test_checkpoint_roundtrip(self, tmp_path):
        datasets = tiny_datasets(tmp_path, per_concept=4)
        config = tiny_config(epochs=1, soft_epochs=0)
        handle = load_pretrained("toy-vit-s8-d64,seed=5")
        state, _ = train(datasets, config, handle, out_dir=tmp_path / "run")
        bundle = load_checkpoint(tmp_path / "run" / "checkpoint.pt")
        assert bundle.config == config
        assert torch.equal(bundle.bank, state.model.prototypes.weights.data)
        assert bundle.num_prototypes == config.num_prototypes
        assert bundle.epoch == 0

    def test_empty_dataset_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ValueError, match="no images"):
            train([DatasetDescriptor("e", "e", tmp_path / "empty")], tiny_config(),
                  load_pretrained("toy-vit-s8-d64"))

    def test_joint_backbone_training_updates_student_backbone(self, tmp_path):
        datasets = tiny_datasets(tmp_path, per_concept=4)
        config = tiny_config(epochs=1, soft_epochs=1, freeze_backbone=False,
                             learning_rate=1e-3)
        handle = load_pretrained("toy-vit-s8-d64,seed=6")
        before = parameter_fingerprint(handle.module)
        state, _ = train(datasets, config, handle)
        # source handle untouched; the student trained its own copy
        assert parameter_fingerprint(handle.module) == before
        assert parameter_fingerprint(state.model.backbone) != before


class TestBankCosine:
    def test_identical_rows(self):
        w = torch.ones(3, 4)
        assert abs(bank_mean_cosine(w) - 1.0) < 1e-6

    def test_orthogonal_rows(self):
        assert abs(bank_mean_cosine(torch.eye(2))) < 1e-6

    def test_matches_brute_force(self):
        g = torch.Generator().manual_seed(0)
        w = torch.randn(5, 7, generator=g)
        unit = w / w.norm(dim=1, keepdim=True)
        acc, n = 0.0, 0
        for i in range(5):
            for j in range(i + 1, 5):
                acc += float(unit[i] @ unit[j])
                n += 1
        assert abs(bank_mean_cosine(w) - acc / n) < 1e-6
