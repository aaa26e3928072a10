import json
import os
import tempfile
import unittest

import pandas as pd
from click.testing import CliRunner

from dam.commands import EXIT_OK, EXIT_USER, cli, main
from dam.config import ModelConfig
from dam.ml.network import DamModel
from dam.utils.checkpoint import save_checkpoint


class CliTestCase(unittest.TestCase):
    """Command-line entry points and exit codes"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.tmp.name, 'runs')

    def tearDown(self):
        self.tmp.cleanup()

    def test_help_lists_commands(self):
        """Test that the root help names every command"""
        result = CliRunner().invoke(cli, ['--help'])
        self.assertEqual(result.exit_code, 0)
        for name in ('prepare', 'train', 'finetune', 'forecast', 'impute', 'eval', 'tune', 'ablate', 'sweep',
                     'inspect'):
            self.assertIn(name, result.output)

    def test_exit_codes(self):
        """Test help, unknown commands and missing inputs"""
        self.assertEqual(main(['forecast', '--help']), EXIT_OK)
        self.assertEqual(main(['bogus']), EXIT_USER)
        self.assertEqual(main(['eval', '--theta0', '--out', self.out]), EXIT_USER)

    def test_failed_run_is_marked(self):
        """Test that a failing command leaves a marker in its output directory"""
        main(['impute', '--synthetic', '600', '--rates', '100', '--out', self.out])
        self.assertTrue(os.path.exists(os.path.join(self.out, 'impute', 'INCOMPLETE')))

    def test_impute(self):
        """Test the imputation command on a synthetic series"""
        code = main(['impute', '--synthetic', '3000', '--rates', '25', '--out', self.out])
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(os.path.join(self.out, 'impute', 'imputation.csv'))
        self.assertEqual(set(frame.method), {'dam_theta0', 'linear'})
        self.assertEqual(main(['impute', '--synthetic', '3000', '--rates', '100', '--out', self.out]), EXIT_USER)

    def test_eval_theta_zero(self):
        """Test the baseline evaluation writes a metric table"""
        code = main(['eval', '--theta0', '--synthetic', '3000', '--horizons', '24', '--context-size', '500',
                     '--sigma', '1000', '--max-windows', '2', '--out', self.out])
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(os.path.join(self.out, 'eval', 'metrics.csv'))
        self.assertEqual(set(frame.metric), {'mse', 'mae', 'nmse', 'nmae'})
        self.assertEqual(set(frame.horizon), {24})
        self.assertTrue(os.path.exists(os.path.join(self.out, 'eval', 'config.json')))

    def test_tune_rejects_absolute_tome(self):
        """Test that tune refuses a fixed ToME target"""
        code = main(['tune', '--theta0', '--synthetic', '3000', '--tome', '10', '--out', self.out])
        self.assertEqual(code, EXIT_USER)

    def test_forecast(self):
        """Test forecasting explicit query times from a saved checkpoint"""
        checkpoint = os.path.join(self.tmp.name, 'ckpt')
        model = DamModel(ModelConfig(d_model=8, d_ff=8, n_layers=1, n_heads=2, n_tome=10, tome_context=20,
                                     dropout=0.0), seed=0)
        save_checkpoint(model, checkpoint)
        code = main(['forecast', '--synthetic', '3000', '--checkpoint', checkpoint, '--at', '0.5,1,30',
                     '--context-size', '20', '--sigma', '50', '--samples', '3', '--out', self.out])
        self.assertEqual(code, EXIT_OK)
        frame = pd.read_csv(os.path.join(self.out, 'forecast', 'forecast.csv'))
        self.assertEqual(list(frame.columns), ['dataset', 'channel', 'query_days', 'forecast', 'p10', 'p90'])
        self.assertEqual(list(frame.query_days), [0.5, 1.0, 30.0])
        self.assertTrue(frame.forecast.notna().all())


class PipelineTestCase(unittest.TestCase):
    """prepare, train, finetune and inspect on a small synthetic run"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.tmp.name, 'runs')
        self.config = os.path.join(self.tmp.name, 'config.json')
        with open(self.config, 'w') as fh:
            json.dump({
                'model': {'d_model': 8, 'd_ff': 8, 'n_layers': 2, 'n_heads': 2, 'n_tome': 10,
                          'tome_context': 20, 'dropout': 0.0},
                'train': {'minibatch': 2, 'context_points': 20, 'target_points': 20, 'sigma': 50.0,
                          'phases': [{'iterations': 3, 'warmup': 1, 'peak': 1e-3, 'floor': 0.0}],
                          'log_interval': 1, 'val_interval': 0, 'checkpoint_interval': 0, 'val_batches': 1},
                'eval': {'context_size': 20, 'sigma': 50.0},
            }, fh)

    def tearDown(self):
        self.tmp.cleanup()

    def run_command(self, *args):
        return main([*args, '--config', self.config, '--synthetic', '600', '--out', self.out])

    def test_prepare(self):
        """Test per-split CSVs, utilities and the dataset summary"""
        self.assertEqual(self.run_command('prepare'), EXIT_OK)
        path = os.path.join(self.out, 'prepare')
        for name in ('synthetic_train.csv', 'synthetic_valid.csv', 'synthetic_test.csv', 'datasets.json'):
            self.assertTrue(os.path.exists(os.path.join(path, name)), msg=name)
        utilities = pd.read_csv(os.path.join(path, 'utilities.csv'))
        self.assertAlmostEqual(utilities.probability.sum(), 1.0)

    def test_train_finetune_inspect(self):
        """Test that a trained checkpoint can be fine-tuned and inspected"""
        self.assertEqual(self.run_command('train'), EXIT_OK)
        checkpoint = os.path.join(self.out, 'train', 'checkpoint-final')
        metrics = pd.read_csv(os.path.join(self.out, 'train', 'metrics.csv'))
        self.assertEqual(list(metrics.step), [1, 2, 3])

        self.assertEqual(self.run_command('finetune', '--checkpoint', checkpoint, '--iterations', '1'), EXIT_OK)
        self.assertTrue(os.path.isdir(os.path.join(self.out, 'finetune', 'checkpoint-final')))

        self.assertEqual(self.run_command('train', '--checkpoint', checkpoint, '--resume'), EXIT_OK)

        self.assertEqual(self.run_command('inspect', '--checkpoint', checkpoint), EXIT_OK)
        path = os.path.join(self.out, 'inspect')
        for name in ('attention.csv', 'cumulative_attention.csv', 'coefficients.csv', 'composition.csv',
                     'coefficients.svg', 'composition.svg'):
            self.assertTrue(os.path.exists(os.path.join(path, name)), msg=name)
        coefficients = pd.read_csv(os.path.join(path, 'coefficients.csv'))
        self.assertEqual(len(coefficients), 437)


if __name__ == '__main__':
    unittest.main()
